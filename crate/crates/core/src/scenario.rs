//! Scenario files: one TOML document with `dynamics`, `grid`, `cost`,
//! `targets` and `routing` blocks.
//!
//! Boxes may list fewer dimensions than the state; missing trailing
//! dimensions span the whole domain. Angles are in radians.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::Spanned;

use crate::bounds::Bounds;
use crate::cost::{CostStyle, RunningCostSpec, Segment, SpeedZone};
use crate::dynamics::{model_registry, Matrix, SampledDynamics};
use crate::error::{Error, Result};
use crate::grid::{Grid, InputSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsSpec {
    pub model: String,
    pub tau: f64,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub disturbance_lower: Vec<f64>,
    pub disturbance_upper: Vec<f64>,
    #[serde(default)]
    pub jacobian_bound: Option<Matrix>,
    #[serde(default)]
    pub substeps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
    pub periodic: Vec<bool>,
    /// Input values per input dimension.
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedZoneSpec {
    pub zone: BoxSpec,
    pub allowed: BoxSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSpec {
    pub style: CostStyle,
    #[serde(default = "one")]
    pub turn_weight: f64,
    /// Input whose square is penalized (0-based).
    pub turn_input: usize,
    #[serde(default)]
    pub lanes: Vec<Segment>,
    #[serde(default)]
    pub obstacles: Vec<Spanned<BoxSpec>>,
    #[serde(default)]
    pub nofly: Vec<Spanned<BoxSpec>>,
    #[serde(default)]
    pub speed_zones: Vec<Spanned<SpeedZoneSpec>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingSpec {
    #[serde(default)]
    pub capacity: Option<usize>,
    #[serde(default)]
    pub num_vehicles: Option<usize>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default = "default_solver")]
    pub solver: String,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_solver() -> String {
    "auto".into()
}

fn default_max_steps() -> usize {
    5000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    dynamics: DynamicsSpec,
    grid: GridSpec,
    cost: CostSpec,
    targets: Vec<Spanned<BoxSpec>>,
    routing: RoutingSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub bounds: Bounds,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub dynamics: SampledDynamics,
    pub grid: Grid,
    pub inputs: InputSet,
    pub cost: RunningCostSpec,
    pub targets: Vec<Target>,
    pub routing: RoutingSpec,
    /// Hex SHA-256 of the scenario file bytes.
    pub hash: String,
}

impl Scenario {
    pub fn target_bounds(&self) -> Vec<Bounds> {
        self.targets.iter().map(|t| t.bounds.clone()).collect()
    }

    /// Target cell sets: cells lying inside each target box.
    pub fn target_cells(&self) -> Vec<Vec<u32>> {
        self.targets
            .iter()
            .map(|t| self.grid.cells_within(&t.bounds).into_iter().map(|c| c as u32).collect())
            .collect()
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_scenario(&text, &path.display().to_string())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

pub fn parse_scenario(text: &str, label: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: label.to_string(),
        message: e.to_string().trim_end().to_string(),
    })?;
    let hash = hex::encode(Sha256::digest(text.as_bytes()));
    let at = |span: std::ops::Range<usize>| format!("line {}", line_of(text, span.start));

    let g = &file.grid;
    let domain = Bounds::new(g.lower.clone(), g.upper.clone()).map_err(|e| relabel(e, "grid"))?;
    let n = domain.dim();
    if g.periodic.len() != n || g.cells.len() != n {
        return Err(Error::validation("grid", format!("cells and periodic need {n} entries")));
    }
    let grid = Grid::new(domain.clone(), g.cells.clone(), g.periodic.clone())?;

    let d = &file.dynamics;
    let model = model_registry().get(&d.model)?;
    let input_bounds =
        Bounds::new(d.input_lower.clone(), d.input_upper.clone()).map_err(|e| relabel(e, "dynamics.input"))?;
    let disturbance = Bounds::closed(d.disturbance_lower.clone(), d.disturbance_upper.clone())
        .map_err(|e| relabel(e, "dynamics.disturbance"))?;
    let mut dynamics = SampledDynamics::new(model, n, d.tau, input_bounds.clone(), disturbance)?;
    if let Some(s) = d.substeps {
        dynamics = dynamics.with_substeps(s)?;
    }
    if let Some(l) = &d.jacobian_bound {
        dynamics = dynamics.with_jacobian_bound(l.clone())?;
    }
    if g.inputs.len() != input_bounds.dim() {
        return Err(Error::validation("grid.inputs", format!("need {} entries", input_bounds.dim())));
    }
    let inputs = InputSet::new(input_bounds, g.inputs.clone())?;

    let pad = |b: &BoxSpec, field: String, line: String| -> Result<Bounds> {
        if b.lower.len() != b.upper.len() || b.lower.is_empty() || b.lower.len() > n {
            return Err(Error::validation(field, format!("{line}: lower and upper need 1 to {n} equal-length entries")));
        }
        let mut lower = b.lower.clone();
        let mut upper = b.upper.clone();
        lower.extend(&domain.lower[b.lower.len()..]);
        upper.extend(&domain.upper[b.upper.len()..]);
        Bounds::new(lower, upper).map_err(|e| Error::validation(field, format!("{line}: {}", reason(e))))
    };
    let inside = |b: &Bounds, field: String, line: String| -> Result<()> {
        for k in 0..n {
            if grid.periodic()[k] {
                continue;
            }
            let tol = 1e-9 * domain.width(k);
            if b.lower[k] < domain.lower[k] - tol || b.upper[k] > domain.upper[k] + tol {
                return Err(Error::validation(
                    field,
                    format!("{line}: dimension {k} [{}, {}] leaves the domain", b.lower[k], b.upper[k]),
                ));
            }
        }
        Ok(())
    };

    let c = &file.cost;
    if c.turn_input >= inputs.dim() {
        return Err(Error::validation("cost.turn_input", format!("must be below {}", inputs.dim())));
    }
    if !(c.turn_weight >= 0.0) {
        return Err(Error::validation("cost.turn_weight", "must be >= 0"));
    }
    if c.style == CostStyle::TimeTurnLane && c.lanes.is_empty() {
        return Err(Error::validation("cost.lanes", "time_turn_lane needs at least one lane segment"));
    }
    let mut cost = RunningCostSpec::time_turn(dynamics.tau(), c.turn_weight, c.turn_input, domain.clone(), g.periodic.clone());
    cost.style = c.style;
    cost.lanes = c.lanes.clone();
    for (kind, list, out) in [("obstacles", &c.obstacles, &mut cost.obstacles), ("nofly", &c.nofly, &mut cost.nofly)] {
        for (i, b) in list.iter().enumerate() {
            out.push(pad(b.get_ref(), format!("cost.{kind}[{i}]"), at(b.span()))?);
        }
    }
    for (i, z) in c.speed_zones.iter().enumerate() {
        let field = format!("cost.speed_zones[{i}]");
        let zone = pad(&z.get_ref().zone, field.clone(), at(z.span()))?;
        // allowed ranges default to everything
        let a = &z.get_ref().allowed;
        let mut lower = a.lower.clone();
        let mut upper = a.upper.clone();
        if lower.len() != upper.len() || lower.len() > n {
            return Err(Error::validation(field, format!("{}: allowed box has bad dimensions", at(z.span()))));
        }
        lower.extend(std::iter::repeat_n(f64::NEG_INFINITY, n - a.lower.len()));
        upper.extend(std::iter::repeat_n(f64::INFINITY, n - a.upper.len()));
        let allowed = Bounds::closed(lower, upper).map_err(|e| Error::validation(field, reason(e)))?;
        cost.speed_zones.push(SpeedZone { zone, allowed });
    }

    if file.targets.len() < 2 {
        return Err(Error::validation("targets", "a depot and at least one customer are required"));
    }
    let mut targets = Vec::with_capacity(file.targets.len());
    for (i, t) in file.targets.iter().enumerate() {
        let name = t.get_ref().name.clone().unwrap_or_else(|| format!("target{i}"));
        let field = format!("targets[{i}] ({name})");
        let line = at(t.span());
        let bounds = pad(t.get_ref(), field.clone(), line.clone())?;
        inside(&bounds, field.clone(), line.clone())?;
        if grid.cells_within(&bounds).is_empty() {
            return Err(Error::validation(field, format!("{line}: the box contains no whole grid cell")));
        }
        targets.push(Target { name, bounds });
    }

    let r = &file.routing;
    if r.capacity == Some(0) {
        return Err(Error::validation("routing.capacity", "must be >= 1"));
    }
    if r.num_vehicles == Some(0) {
        return Err(Error::validation("routing.num_vehicles", "must be >= 1"));
    }
    if r.rho.is_some_and(|v| !(v >= 0.0)) {
        return Err(Error::validation("routing.rho", "must be >= 0"));
    }
    if r.max_steps == 0 {
        return Err(Error::validation("routing.max_steps", "must be > 0"));
    }
    if let Some(x) = &r.initial_state {
        if x.len() != n {
            return Err(Error::validation("routing.initial_state", format!("need {n} entries")));
        }
        grid.quantize(x).map_err(|e| Error::validation("routing.initial_state", e.to_string()))?;
    }

    Ok(Scenario {
        name: file.name,
        dynamics,
        grid,
        inputs,
        cost,
        targets,
        routing: file.routing,
        hash,
    })
}

fn reason(e: Error) -> String {
    match e {
        Error::Validation { reason, .. } => reason,
        other => other.to_string(),
    }
}

fn relabel(e: Error, field: &str) -> Error {
    Error::validation(field, reason(e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "tiny"

[dynamics]
model = "dubins"
tau = 0.65
input_lower = [20.0, -0.5]
input_upper = [50.0, 0.5]
disturbance_lower = [-5.0, -2.0, -0.04]
disturbance_upper = [5.0, 2.0, 0.04]

[grid]
lower = [0.0, 0.0, 0.0]
upper = [100.0, 100.0, 6.283185307179586]
cells = [10, 10, 8]
periodic = [false, false, true]
inputs = [2, 3]

[cost]
style = "time_turn"
turn_input = 1

[[cost.obstacles]]
lower = [40.0, 40.0]
upper = [60.0, 60.0]

[[targets]]
name = "depot"
lower = [0.0, 0.0]
upper = [20.0, 20.0]

[[targets]]
lower = [80.0, 80.0]
upper = [100.0, 100.0]

[routing]
num_vehicles = 1
"#;

    #[test]
    fn parses_and_pads() {
        let s = parse_scenario(BASE, "tiny.toml").unwrap();
        assert_eq!(s.targets.len(), 2);
        assert_eq!(s.targets[1].name, "target1");
        assert_eq!(s.targets[0].bounds.upper[2], std::f64::consts::TAU);
        assert_eq!(s.cost.obstacles.len(), 1);
        assert_eq!(s.inputs.len(), 6);
        assert_eq!(s.routing.solver, "auto");
        assert_eq!(s.hash.len(), 64);
        assert_eq!(s.target_cells()[0].len(), 2 * 2 * 8);
    }

    #[test]
    fn target_outside_domain_names_target_and_line() {
        let text = BASE.replace("lower = [80.0, 80.0]\nupper = [100.0, 100.0]", "lower = [80.0, 80.0]\nupper = [120.0, 100.0]");
        let err = parse_scenario(&text, "tiny.toml").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation { .. }));
        assert!(msg.contains("targets[1]"), "{msg}");
        let line = BASE.lines().position(|l| l.contains("lower = [80.0")).unwrap() + 1;
        assert!(msg.contains(&format!("line {}", line - 1)) || msg.contains(&format!("line {line}")), "{msg}");
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = parse_scenario("name = \"x\"\n[dynamics\n", "bad.toml").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
        assert!(err.to_string().contains("line 2") || err.to_string().contains("2:"), "{err}");
    }

    #[test]
    fn unknown_model_is_rejected() {
        let err = parse_scenario(&BASE.replace("\"dubins\"", "\"hovercraft\""), "x").unwrap_err();
        assert!(matches!(err, Error::UnknownStrategy { .. }), "{err}");
    }

    #[test]
    fn target_without_whole_cell() {
        let text = BASE.replace("upper = [20.0, 20.0]", "upper = [5.0, 5.0]");
        assert!(parse_scenario(&text, "x").unwrap_err().to_string().contains("no whole grid cell"));
    }
}
