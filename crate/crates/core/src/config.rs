//! Run configuration files: TOML with unit-suffixed quantities
//! (`f0 = "16 GHz"`, `bias = "2050 Oe"`), normalized to SI on load.

use std::path::Path;

use thiserror::Error;
use toml::{Table, Value};

use crate::em::{Boundary, BoundarySpec, SourceKind, SourceSpec};
use crate::grid::{Component, GridSpec};
use crate::llg::LlgIterationParams;
use crate::signal::Window;
use crate::simulation::{ProbeSpec, Region, SimConfig};
use crate::units::{gauss_4pi_ms_to_si, oersted_to_si, MaterialCell};
use crate::vec3::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}field `{field}`: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

/// Physical dimension expected for a quantity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dim {
    Length,
    Time,
    Frequency,
    /// Magnetic field strength `H`.
    Field,
    /// Magnetization; Gauss values are read as `4πMs`.
    Magnetization,
    Conductivity,
    Electric,
}

impl Dim {
    fn units(self) -> &'static [(&'static str, i32)] {
        match self {
            Dim::Length => &[("m", 0), ("cm", -2), ("mm", -3), ("um", -6), ("µm", -6), ("nm", -9)],
            Dim::Time => &[("s", 0), ("ms", -3), ("us", -6), ("µs", -6), ("ns", -9), ("ps", -12), ("fs", -15)],
            Dim::Frequency => &[("Hz", 0), ("kHz", 3), ("MHz", 6), ("GHz", 9), ("THz", 12)],
            Dim::Field => &[("A/m", 0), ("kA/m", 3)],
            Dim::Magnetization => &[("A/m", 0), ("kA/m", 3)],
            Dim::Conductivity => &[("S/m", 0)],
            Dim::Electric => &[("V/m", 0), ("kV/m", 3), ("MV/m", 6)],
        }
    }

    fn names(self) -> String {
        let mut v: Vec<&str> = self.units().iter().map(|u| u.0).collect();
        match self {
            Dim::Field => v.extend(["Oe", "kOe"]),
            Dim::Magnetization => v.extend(["G", "kG"]),
            _ => {}
        }
        v.join(", ")
    }
}

/// `x · 10^e`, correctly rounded for exactly representable powers.
fn scale10(x: f64, e: i32) -> f64 {
    if e >= 0 {
        x * 10f64.powi(e)
    } else {
        x / 10f64.powi(-e)
    }
}

/// Parses `"<number> <unit>"` into SI.
pub fn parse_quantity(s: &str, dim: Dim) -> Result<f64, String> {
    let s = s.trim();
    let split = s
        .char_indices()
        .find(|&(i, c)| c.is_alphabetic() && !(c == 'e' || c == 'E') || (c == 'µ') || (i > 0 && c == ' '))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let num: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("cannot read a number from {s:?}"))?;
    let unit = unit.trim();
    if unit.is_empty() {
        return Err(format!("missing unit in {s:?} (expected one of {})", dim.names()));
    }
    if !num.is_finite() {
        return Err(format!("non-finite value {s:?}"));
    }
    match (dim, unit) {
        (Dim::Field, "Oe") => return Ok(oersted_to_si(num)),
        (Dim::Field, "kOe") => return Ok(oersted_to_si(num * 1e3)),
        (Dim::Magnetization, "G") => return gauss_4pi_ms_to_si(num).map_err(|e| e.to_string()),
        (Dim::Magnetization, "kG") => return gauss_4pi_ms_to_si(num * 1e3).map_err(|e| e.to_string()),
        _ => {}
    }
    dim.units()
        .iter()
        .find(|u| u.0 == unit)
        .map(|u| scale10(num, u.1))
        .ok_or_else(|| format!("unknown unit {unit:?} (expected one of {})", dim.names()))
}

/// Expands an inclusive `from..=to` range with `step`.
pub fn bias_range(from: f64, to: f64, step: f64) -> Result<Vec<f64>, String> {
    if !(step > 0.0) || !(to >= from) {
        return Err("range needs from <= to and step > 0".into());
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| from + step * i as f64).collect())
}

/// Comma-separated quantity list, e.g. `"1500 Oe, 2050 Oe"`.
pub fn parse_bias_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| parse_quantity(t, Dim::Field))
        .collect()
}

struct Ctx<'a> {
    src: &'a str,
}

impl Ctx<'_> {
    /// First line that assigns `key` inside `section` (1-based).
    fn line_of(&self, section: &str, key: &str) -> Option<usize> {
        let mut cur = String::new();
        let mut first_header = None;
        for (n, raw) in self.src.lines().enumerate() {
            let l = raw.trim();
            if l.starts_with('[') {
                cur = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
                if cur == section && first_header.is_none() {
                    first_header = Some(n + 1);
                }
                continue;
            }
            if cur == section {
                if let Some((k, _)) = l.split_once('=') {
                    if k.trim() == key {
                        return Some(n + 1);
                    }
                }
            }
        }
        first_header
    }

    fn err(&self, section: &str, key: &str, msg: impl Into<String>) -> ConfigError {
        let field = if key.is_empty() { section.to_string() } else { format!("{section}.{key}") };
        ConfigError {
            line: self.line_of(section, key),
            field,
            message: msg.into(),
        }
    }

    fn table<'t>(&self, root: &'t Table, name: &str) -> Result<&'t Table, ConfigError> {
        match root.get(name) {
            Some(Value::Table(t)) => Ok(t),
            Some(_) => Err(self.err(name, "", "expected a table")),
            None => Err(self.err(name, "", "missing section")),
        }
    }

    fn quantity(&self, t: &Table, sec: &str, key: &str, dim: Dim) -> Result<f64, ConfigError> {
        match t.get(key) {
            Some(Value::String(s)) => parse_quantity(s, dim).map_err(|m| self.err(sec, key, m)),
            Some(Value::Float(_)) | Some(Value::Integer(_)) => Err(self.err(
                sec,
                key,
                format!("missing unit (write e.g. \"{} {}\")", t[key], dim.units()[0].0),
            )),
            Some(_) => Err(self.err(sec, key, "expected a quantity string")),
            None => Err(self.err(sec, key, "missing")),
        }
    }

    fn quantity_or(&self, t: &Table, sec: &str, key: &str, dim: Dim, default: f64) -> Result<f64, ConfigError> {
        if t.contains_key(key) {
            self.quantity(t, sec, key, dim)
        } else {
            Ok(default)
        }
    }

    fn number(&self, t: &Table, sec: &str, key: &str) -> Result<f64, ConfigError> {
        match t.get(key) {
            Some(Value::Float(f)) => Ok(*f),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(_) => Err(self.err(sec, key, "expected a plain number")),
            None => Err(self.err(sec, key, "missing")),
        }
    }

    fn number_or(&self, t: &Table, sec: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        if t.contains_key(key) {
            self.number(t, sec, key)
        } else {
            Ok(default)
        }
    }

    fn count(&self, t: &Table, sec: &str, key: &str) -> Result<usize, ConfigError> {
        match t.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as usize),
            Some(_) => Err(self.err(sec, key, "expected a non-negative integer")),
            None => Err(self.err(sec, key, "missing")),
        }
    }

    fn count_or(&self, t: &Table, sec: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        if t.contains_key(key) {
            self.count(t, sec, key)
        } else {
            Ok(default)
        }
    }

    fn index3(&self, t: &Table, sec: &str, key: &str) -> Result<[usize; 3], ConfigError> {
        let bad = || self.err(sec, key, "expected an array of three non-negative integers");
        match t.get(key) {
            Some(Value::Array(a)) if a.len() == 3 => {
                let mut out = [0; 3];
                for (o, v) in out.iter_mut().zip(a) {
                    match v {
                        Value::Integer(i) if *i >= 0 => *o = *i as usize,
                        _ => return Err(bad()),
                    }
                }
                Ok(out)
            }
            Some(_) => Err(bad()),
            None => Err(self.err(sec, key, "missing")),
        }
    }

    fn lengths3(&self, t: &Table, sec: &str, key: &str) -> Result<[f64; 3], ConfigError> {
        match t.get(key) {
            Some(Value::Array(a)) if a.len() == 3 => {
                let mut out = [0.0; 3];
                for (o, v) in out.iter_mut().zip(a) {
                    match v {
                        Value::String(s) => *o = parse_quantity(s, Dim::Length).map_err(|m| self.err(sec, key, m))?,
                        _ => return Err(self.err(sec, key, "expected three length strings such as \"5 um\"")),
                    }
                }
                Ok(out)
            }
            Some(Value::String(s)) => {
                let d = parse_quantity(s, Dim::Length).map_err(|m| self.err(sec, key, m))?;
                Ok([d; 3])
            }
            Some(_) => Err(self.err(sec, key, "expected a length or three lengths")),
            None => Err(self.err(sec, key, "missing")),
        }
    }

    fn string<'t>(&self, t: &'t Table, sec: &str, key: &str) -> Result<&'t str, ConfigError> {
        match t.get(key) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(self.err(sec, key, "expected a string")),
            None => Err(self.err(sec, key, "missing")),
        }
    }

    fn boundary_pair(&self, t: &Table, key: &str) -> Result<[Boundary; 2], ConfigError> {
        let one = |s: &str| -> Result<Boundary, ConfigError> {
            s.parse().map_err(|_| self.err("boundaries", key, format!("unknown boundary {s:?} (pec, pmc, mur)")))
        };
        match t.get(key) {
            None => Ok([Boundary::Pmc; 2]),
            Some(Value::String(s)) => {
                let b = one(s)?;
                Ok([b, b])
            }
            Some(Value::Array(a)) if a.len() == 2 => {
                let mut out = [Boundary::Pmc; 2];
                for (o, v) in out.iter_mut().zip(a) {
                    match v {
                        Value::String(s) => *o = one(s)?,
                        _ => return Err(self.err("boundaries", key, "expected boundary names")),
                    }
                }
                Ok(out)
            }
            Some(_) => Err(self.err("boundaries", key, "expected a name or a [low, high] pair")),
        }
    }

    fn material(&self, t: &Table, sec: &str) -> Result<MaterialCell<f64>, ConfigError> {
        let eps_r = self.number_or(t, sec, "eps_r", 1.0)?;
        let sigma = self.quantity_or(t, sec, "sigma", Dim::Conductivity, 0.0)?;
        let ms = self.quantity_or(t, sec, "ms", Dim::Magnetization, 0.0)?;
        let alpha = self.number_or(t, sec, "alpha", 0.0)?;
        let cell = if ms > 0.0 {
            MaterialCell::magnet(ms, alpha, eps_r, sigma)
        } else {
            MaterialCell::dielectric(eps_r, sigma)
        };
        cell.validate().map_err(|e| self.err(sec, "", e.to_string()))?;
        Ok(cell)
    }
}

fn axis_vector(s: &str) -> Option<Vec3<f64>> {
    let (neg, s) = match s.trim().strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s.trim().strip_prefix('+').unwrap_or(s.trim())),
    };
    let v = match s {
        "x" => Vec3::new(1.0, 0.0, 0.0),
        "y" => Vec3::new(0.0, 1.0, 0.0),
        "z" => Vec3::new(0.0, 0.0, 1.0),
        _ => return None,
    };
    Some(if neg { -v } else { v })
}

/// Parses a configuration document.
pub fn parse_config(src: &str) -> Result<SimConfig<f64>, ConfigError> {
    let root: Table = toml::from_str(src).map_err(|e| ConfigError {
        line: e.span().map(|sp| src[..sp.start].matches('\n').count() + 1),
        field: "<syntax>".into(),
        message: e.message().trim().to_string(),
    })?;
    let cx = Ctx { src };

    let g = cx.table(&root, "grid")?;
    let cells = cx.index3(g, "grid", "cells")?;
    let size = cx.lengths3(g, "grid", "size")?;
    let grid = GridSpec::new(cells, size).map_err(|e| cx.err("grid", "cells", e.to_string()))?;

    let mut boundaries = BoundarySpec::uniform(Boundary::Pmc);
    if let Some(Value::Table(b)) = root.get("boundaries") {
        for (a, key) in ["x", "y", "z"].iter().enumerate() {
            boundaries.faces[a] = cx.boundary_pair(b, key)?;
        }
    }

    let background = match root.get("background") {
        Some(Value::Table(t)) => cx.material(t, "background")?,
        Some(_) => return Err(cx.err("background", "", "expected a table")),
        None => MaterialCell::vacuum(),
    };

    let mut regions = Vec::new();
    match root.get("region") {
        None => {}
        Some(Value::Array(list)) => {
            for v in list {
                let Value::Table(t) = v else {
                    return Err(cx.err("region", "", "expected [[region]] tables"));
                };
                regions.push(Region {
                    lo: cx.index3(t, "region", "lo")?,
                    hi: cx.index3(t, "region", "hi")?,
                    cell: cx.material(t, "region")?,
                });
            }
        }
        Some(_) => return Err(cx.err("region", "", "use [[region]] array-of-tables")),
    }

    let s = cx.table(&root, "source")?;
    let pol = match s.get("polarization") {
        None => Vec3::new(1.0, 0.0, 0.0),
        Some(Value::String(p)) => {
            axis_vector(p).ok_or_else(|| cx.err("source", "polarization", format!("expected x, y or z, got {p:?}")))?
        }
        Some(_) => return Err(cx.err("source", "polarization", "expected x, y or z")),
    };
    let source = SourceSpec {
        kind: SourceKind::ModifiedGaussian,
        f0: cx.quantity(s, "source", "f0", Dim::Frequency)?,
        tp: cx.quantity(s, "source", "tp", Dim::Time)?,
        amplitude: cx.quantity(s, "source", "amplitude", Dim::Electric)?,
        location: cx.index3(s, "source", "cell")?,
        polarization: pol,
    };

    let r = cx.table(&root, "run")?;
    let cfl_factor = cx.number_or(r, "run", "cfl", 0.9)?;
    let t_end = cx.quantity(r, "run", "t_end", Dim::Time)?;
    let record_every = cx.count_or(r, "run", "record_every", 1)?;

    let b = cx.table(&root, "bias")?;
    let dir = cx.string(b, "bias", "direction")?;
    let bias_direction =
        axis_vector(dir).ok_or_else(|| cx.err("bias", "direction", format!("expected x, y or z, got {dir:?}")))?;
    let bias_sweep = match (b.get("values"), b.get("range")) {
        (Some(Value::Array(vals)), None) => vals
            .iter()
            .map(|v| match v {
                Value::String(s) => parse_quantity(s, Dim::Field).map_err(|m| cx.err("bias", "values", m)),
                _ => Err(cx.err("bias", "values", "expected field strings such as \"2050 Oe\"")),
            })
            .collect::<Result<Vec<_>, _>>()?,
        (None, Some(Value::Table(rg))) => {
            let from = cx.quantity(rg, "bias", "from", Dim::Field)?;
            let to = cx.quantity(rg, "bias", "to", Dim::Field)?;
            let step = cx.quantity(rg, "bias", "step", Dim::Field)?;
            bias_range(from, to, step).map_err(|m| cx.err("bias", "range", m))?
        }
        (Some(_), Some(_)) => return Err(cx.err("bias", "values", "give either values or range, not both")),
        _ => return Err(cx.err("bias", "values", "missing (values = [...] or range = {from, to, step})")),
    };

    let mut probes = Vec::new();
    match root.get("probe") {
        None => {}
        Some(Value::Array(list)) => {
            for v in list {
                let Value::Table(t) = v else {
                    return Err(cx.err("probe", "", "expected [[probe]] tables"));
                };
                let name = cx.string(t, "probe", "component")?;
                let component = Component::parse(name)
                    .ok_or_else(|| cx.err("probe", "component", format!("unknown component {name:?}")))?;
                probes.push(ProbeSpec {
                    component,
                    at: cx.index3(t, "probe", "cell")?,
                });
            }
        }
        Some(_) => return Err(cx.err("probe", "", "use [[probe]] array-of-tables")),
    }

    let mut llg = LlgIterationParams::default();
    if let Some(Value::Table(t)) = root.get("llg") {
        llg.tol = cx.number_or(t, "llg", "tol", llg.tol)?;
        llg.max_iters = cx.count_or(t, "llg", "max_iters", llg.max_iters)?;
        if !(llg.tol > 0.0) {
            return Err(cx.err("llg", "tol", "must be positive"));
        }
    }

    let (mut sweep_probe, mut window, mut n_fft) = (0, Window::None, 0);
    if let Some(Value::Table(t)) = root.get("spectrum") {
        sweep_probe = cx.count_or(t, "spectrum", "probe", 0)?;
        n_fft = cx.count_or(t, "spectrum", "n_fft", 0)?;
        if t.contains_key("window") {
            window = match cx.string(t, "spectrum", "window")? {
                "none" => Window::None,
                "hann" => Window::Hann,
                w => return Err(cx.err("spectrum", "window", format!("unknown window {w:?} (none, hann)"))),
            };
        }
    }

    let cfg = SimConfig {
        grid,
        background,
        regions,
        source,
        boundaries,
        cfl_factor,
        t_end,
        probes,
        bias_direction,
        bias_sweep,
        llg,
        record_every,
        sweep_probe,
        window,
        n_fft,
    };
    cfg.validate().map_err(|e| {
        let msg = e.to_string();
        let (sec, key) = if msg.contains("probe") {
            ("probe", "cell")
        } else if msg.contains("source") {
            ("source", "cell")
        } else if msg.contains("cfl") {
            ("run", "cfl")
        } else if msg.contains("t_end") {
            ("run", "t_end")
        } else if msg.contains("bias") {
            ("bias", "values")
        } else {
            ("grid", "cells")
        };
        cx.err(sec, key, msg)
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<SimConfig<f64>, ConfigError> {
    let src = std::fs::read_to_string(path).map_err(|e| ConfigError {
        line: None,
        field: "<file>".into(),
        message: format!("{}: {e}", path.display()),
    })?;
    parse_config(&src)
}
