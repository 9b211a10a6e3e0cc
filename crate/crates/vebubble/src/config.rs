//! Run configuration, experiment presets and the TOML schema.
//!
//! A configuration file is a TOML table with the keys of [`RunConfig`]. When
//! it names a `preset` (or one is given on the command line) the file only
//! needs to list the values it overrides; nested tables merge key by key.

use serde::{Deserialize, Serialize};

use crate::bulk_mesh::BoundaryTag;
use crate::error::{Error, Result};
use crate::interface::{Point, Shape};

/// Material parameters of the two phases. `minus` is the inner phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseParams {
    pub rho_minus: f64,
    pub rho_plus: f64,
    pub mu_minus: f64,
    pub mu_plus: f64,
    pub lambda_minus: f64,
    pub lambda_plus: f64,
    /// single shear modulus
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_shear: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_minus: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_plus: Option<f64>,
    pub gamma: f64,
    pub alpha: f64,
    /// body acceleration, multiplied by the density
    #[serde(default)]
    pub f1: Point,
    /// body force
    #[serde(default)]
    pub f2: Point,
}

fn default_tol() -> f64 {
    1e-12
}
fn default_max_fp_iters() -> usize {
    50
}
fn default_true() -> bool {
    true
}
fn default_tags() -> [BoundaryTag; 4] {
    [BoundaryTag::Dirichlet; 4]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// `[x0, y0, x1, y1]`
    pub domain: [f64; 4],
    /// bottom, right, top, left; `neumann` is the do-nothing condition
    #[serde(default = "default_tags")]
    pub boundary: [BoundaryTag; 4],
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub params: PhaseParams,
    pub shape: Shape,
    /// coarse mesh size is `h_c = 2 / n_c`
    pub n_c: usize,
    /// fine mesh size near the interface is `h_c / refine_factor`
    pub refine_factor: f64,
    pub interface_n: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_fp_iters")]
    pub max_fp_iters: usize,
    #[serde(default = "default_true")]
    pub xfem: bool,
    /// add the piecewise constant pressures to P1
    #[serde(default)]
    pub pressure_p0: bool,
    #[serde(default)]
    pub variable_g: bool,
    /// use the newest velocity in the tensor sweep
    #[serde(default)]
    pub gauss_seidel: bool,
    /// steps between field snapshots; 0 disables them
    #[serde(default)]
    pub snapshot_cadence: usize,
    /// write every assembled system in Matrix Market format
    #[serde(default)]
    pub dump_matrices: bool,
}

impl RunConfig {
    pub fn h_coarse(&self) -> f64 {
        2.0 / self.n_c as f64
    }

    pub fn h_fine(&self) -> f64 {
        self.h_coarse() / self.refine_factor
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil() as usize
    }

    /// Shear modulus of each phase, `(minus, plus)`.
    pub fn shear_moduli(&self) -> (f64, f64) {
        let p = &self.params;
        if self.variable_g {
            (p.g_minus.unwrap_or(0.0), p.g_plus.unwrap_or(0.0))
        } else {
            let g = p.g_shear.unwrap_or(0.0);
            (g, g)
        }
    }

    /// Tensor equation is skipped entirely when no phase is elastic.
    pub fn elastic(&self) -> bool {
        let (a, b) = self.shear_moduli();
        a != 0.0 || b != 0.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let d = self.domain;
        if !(d[2] > d[0] && d[3] > d[1]) {
            return bad(format!("empty domain {d:?}"));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end >= self.dt * (1.0 - 1e-12)) {
            return bad(format!("T = {} is shorter than dt = {}", self.t_end, self.dt));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_fp_iters == 0 {
            return bad("max_fp_iters must be at least 1".into());
        }
        if self.n_c == 0 || !(self.refine_factor >= 1.0) || self.interface_n < 3 {
            return bad("n_c >= 1, refine_factor >= 1 and interface_n >= 3 required".into());
        }
        let p = &self.params;
        for (name, v) in [
            ("rho_minus", p.rho_minus),
            ("rho_plus", p.rho_plus),
            ("mu_minus", p.mu_minus),
            ("mu_plus", p.mu_plus),
            ("lambda_minus", p.lambda_minus),
            ("lambda_plus", p.lambda_plus),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(p.gamma >= 0.0) || !(p.alpha >= 0.0) {
            return bad("gamma and alpha must be non-negative".into());
        }
        if self.variable_g {
            if p.g_minus.is_none() {
                return Err(Error::MissingRequired("params.g_minus".into()));
            }
            if p.g_plus.is_none() {
                return Err(Error::MissingRequired("params.g_plus".into()));
            }
        } else if p.g_shear.is_none() {
            return Err(Error::MissingRequired("params.g_shear".into()));
        }
        let (gm, gp) = self.shear_moduli();
        if !(gm >= 0.0 && gp >= 0.0) {
            return bad("shear moduli must be non-negative".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// Preset arguments after the name: `name:key=value,key=value`.
fn preset_args(spec: &str) -> Result<(&str, Vec<(&str, f64)>)> {
    let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut args = Vec::new();
    for kv in rest.split(',').filter(|s| !s.trim().is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("preset argument `{kv}` is not key=value")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::TypeMismatch(format!("preset argument `{}` expects a number", k.trim())))?;
        args.push((k.trim(), v));
    }
    Ok((name.trim(), args))
}

fn take(args: &[(&str, f64)], allowed: &[(&str, f64)]) -> Result<Vec<f64>> {
    for (k, _) in args {
        if !allowed.iter().any(|(a, _)| a == k) {
            return Err(Error::UnknownKey(format!("preset argument `{k}`")));
        }
    }
    Ok(allowed
        .iter()
        .map(|(name, default)| args.iter().rev().find(|(k, _)| k == name).map_or(*default, |(_, v)| *v))
        .collect())
}

/// Ellipse retracting to a circle under surface tension.
pub fn retraction() -> RunConfig {
    RunConfig {
        preset: Some("retraction".into()),
        domain: [0.0, 0.0, 2.0, 2.0],
        boundary: default_tags(),
        dt: 1e-4,
        t_end: 1.0,
        params: PhaseParams {
            rho_minus: 1.0,
            rho_plus: 1.0,
            mu_minus: 0.1,
            mu_plus: 0.1,
            lambda_minus: 0.01,
            lambda_plus: 0.01,
            g_shear: Some(1.0),
            g_minus: None,
            g_plus: None,
            gamma: 10.0,
            alpha: 1e-2,
            f1: [0.0, 0.0],
            f2: [0.0, 0.0],
        },
        shape: Shape::Ellipse { center: [1.0, 1.0], a: 0.8, b: 0.2 },
        n_c: 20,
        refine_factor: 8.0,
        interface_n: 400,
        tol: default_tol(),
        max_fp_iters: default_max_fp_iters(),
        xfem: true,
        pressure_p0: false,
        variable_g: false,
        gauss_seidel: false,
        snapshot_cadence: 0,
        dump_matrices: false,
    }
}

/// Bubble rising in a viscoelastic outer fluid; `c0` sets the elastic share
/// of the total outer viscosity 10.25.
pub fn rising_bubble(c0: f64, lambda_plus: f64) -> RunConfig {
    let mu_plus = 10.25 / (1.0 + c0);
    RunConfig {
        preset: Some(format!("rising_bubble:c0={c0},lambda_plus={lambda_plus}")),
        domain: [0.0, 0.0, 2.0, 4.0],
        params: PhaseParams {
            rho_minus: 0.1,
            rho_plus: 1.0,
            mu_minus: 1.025,
            mu_plus,
            lambda_minus: 1e-3,
            lambda_plus,
            g_shear: Some(c0 * mu_plus / lambda_plus),
            g_minus: None,
            g_plus: None,
            gamma: 10.0,
            alpha: 1e-2,
            f1: [0.0, -980.0],
            f2: [0.0, 0.0],
        },
        shape: Shape::Circle { center: [1.0, 0.8], r: 0.3 },
        ..retraction()
    }
}

/// Rising bubble with a different shear modulus in each phase.
pub fn rising_bubble_gvar(c_plus: f64, c_minus: f64) -> RunConfig {
    let (mu_plus, mu_minus) = (10.25 / (1.0 + c_plus), 10.25 / (1.0 + c_minus));
    let lambda = 0.05;
    let mut cfg = rising_bubble(0.0, lambda);
    cfg.preset = Some(format!("rising_bubble_gvar:c_plus={c_plus},c_minus={c_minus}"));
    cfg.variable_g = true;
    cfg.params.mu_plus = mu_plus;
    cfg.params.mu_minus = mu_minus;
    cfg.params.lambda_minus = lambda;
    cfg.params.lambda_plus = lambda;
    cfg.params.g_shear = None;
    cfg.params.g_plus = Some(c_plus * mu_plus / lambda);
    cfg.params.g_minus = Some(c_minus * mu_minus / lambda);
    cfg
}

/// Looks up a preset by name, e.g. `rising_bubble:c0=19.5,lambda_plus=0.05`.
pub fn preset(spec: &str) -> Result<RunConfig> {
    let (name, args) = preset_args(spec)?;
    let mut cfg = match name {
        "retraction" => {
            take(&args, &[])?;
            retraction()
        }
        "rising_bubble" => {
            let v = take(&args, &[("c0", 1.0), ("lambda_plus", 0.05)])?;
            rising_bubble(v[0], v[1])
        }
        "rising_bubble_gvar" => {
            let v = take(&args, &[("c_plus", 19.5), ("c_minus", 1.0)])?;
            rising_bubble_gvar(v[0], v[1])
        }
        _ => return Err(Error::InvalidConfig(format!("unknown preset `{name}`"))),
    };
    cfg.preset = Some(spec.to_string());
    Ok(cfg)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            // a different shape kind replaces the whole table
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if k != "shape" || o.get("kind").is_none_or(|kind| b.get("kind") == Some(kind)) =>
            {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn classify_de_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    if msg.contains("unknown field") || msg.contains("unknown variant") {
        Error::UnknownKey(msg)
    } else if msg.contains("missing field") {
        Error::MissingRequired(msg)
    } else if msg.contains("invalid type") || msg.contains("invalid value") || msg.contains("invalid length") {
        Error::TypeMismatch(msg)
    } else {
        Error::InvalidConfig(msg)
    }
}

/// Parses configuration text, merged over `preset` when given (a `preset`
/// key in the text takes precedence).
pub fn parse_config_str(text: &str, preset_name: Option<&str>) -> Result<RunConfig> {
    let table: toml::Table = text.parse().map_err(classify_de_error)?;
    let name = match table.get("preset") {
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(other) => return Err(Error::TypeMismatch(format!("preset must be a string, got {}", other.type_str()))),
        None => preset_name.map(str::to_string),
    };
    let merged = match name {
        Some(n) => {
            let base = preset(&n)?;
            let mut t = toml::Table::try_from(&base).map_err(|e| Error::InvalidConfig(e.to_string()))?;
            merge(&mut t, table);
            t
        }
        None => table,
    };
    let cfg: RunConfig = merged.try_into().map_err(classify_de_error)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Reads a configuration file; `preset` supplies defaults for missing keys.
pub fn parse_config(path: &std::path::Path, preset_name: Option<&str>) -> Result<RunConfig> {
    parse_config_str(&std::fs::read_to_string(path)?, preset_name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retraction_preset_values() {
        let c = preset("retraction").unwrap();
        assert_eq!(c.params.g_shear, Some(1.0));
        assert_eq!(c.params.gamma, 10.0);
        assert_eq!(c.dt, 1e-4);
        assert_eq!(c.interface_n, 400);
        c.validate().unwrap();
    }

    #[test]
    fn newtonian_rising_bubble_has_no_elasticity() {
        let c = preset("rising_bubble:c0=0").unwrap();
        assert!(!c.elastic());
        assert_eq!(c.params.mu_plus, 10.25);
        let c = preset("rising_bubble:c0=19.5,lambda_plus=0.05").unwrap();
        let g = c.params.g_shear.unwrap();
        assert!((c.params.mu_plus + g * 0.05 - 10.25).abs() < 1e-12);
    }

    #[test]
    fn gvar_preset_keeps_total_viscosity() {
        let c = preset("rising_bubble_gvar").unwrap();
        let (gm, gp) = c.shear_moduli();
        assert!((c.params.mu_plus + gp * 0.05 - 10.25).abs() < 1e-12);
        assert!((c.params.mu_minus + gm * 0.05 - 10.25).abs() < 1e-12);
        assert!(c.variable_g);
    }

    #[test]
    fn override_merges_over_preset() {
        let c = parse_config_str("preset = \"retraction\"\ndt = 1e-3\n[params]\nalpha = 0.5\n", None).unwrap();
        assert_eq!(c.dt, 1e-3);
        assert_eq!(c.params.alpha, 0.5);
        assert_eq!(c.params.gamma, 10.0);
        let c = parse_config_str("T = 0.5", Some("rising_bubble")).unwrap();
        assert_eq!(c.t_end, 0.5);
        let c =
            parse_config_str("[shape]\nkind = \"circle\"\ncenter = [1.0, 1.0]\nr = 0.5", Some("retraction")).unwrap();
        assert_eq!(c.shape, Shape::Circle { center: [1.0, 1.0], r: 0.5 });
    }

    #[test]
    fn error_kinds() {
        assert!(matches!(parse_config_str("bogus = 1", Some("retraction")), Err(Error::UnknownKey(_))));
        assert!(matches!(parse_config_str("[params]\nbogus = 1", Some("retraction")), Err(Error::UnknownKey(_))));
        assert!(matches!(parse_config_str("dt = \"fast\"", Some("retraction")), Err(Error::TypeMismatch(_))));
        assert!(matches!(parse_config_str("dt = 1e-3", None), Err(Error::MissingRequired(_))));
        assert!(matches!(parse_config_str("variable_g = true", Some("retraction")), Err(Error::MissingRequired(_))));
        assert!(matches!(parse_config_str("dt = -1.0", Some("retraction")), Err(Error::InvalidConfig(_))));
        assert!(matches!(preset("rising_bubble:c1=2"), Err(Error::UnknownKey(_))));
    }

    #[test]
    fn presets_round_trip() {
        for name in
            ["retraction", "rising_bubble:c0=19.5,lambda_plus=0.075", "rising_bubble_gvar:c_plus=1,c_minus=19.5"]
        {
            let c = preset(name).unwrap();
            let text = c.to_toml().unwrap();
            assert_eq!(parse_config_str(&text, None).unwrap(), c, "{text}");
        }
    }

    #[test]
    fn step_count() {
        let mut c = retraction();
        c.dt = 1e-3;
        c.t_end = 0.1;
        assert_eq!(c.n_steps(), 100);
        c.t_end = 1e-3;
        assert_eq!(c.n_steps(), 1);
    }
}
