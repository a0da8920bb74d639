//! Experiment configuration.
//!
//! Files are flat `key = value` lines grouped under `[section]` headers.
//! `#` starts a comment. Every experiment starts from a preset selected by
//! `[experiment] kind`; remaining keys override it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Boundary, ModelId, SpatialGrid};

/// Parsed `[section] key = value` document.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDoc {
    entries: BTreeMap<(String, String), String>,
}

impl ConfigDoc {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| {
                    Error::Config(format!("line {}: unterminated section header", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries
                .insert((section.clone(), key.clone()), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {section}.{key}",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.entries
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.keys().map(|(s, k)| (s.as_str(), k.as_str()))
    }
}

fn parse_value<T: FromStr>(section: &str, key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{section}.{key}: cannot parse {value:?}")))
}

fn parse_list<T: FromStr>(section: &str, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(section, key, s))
        .collect()
}

/// Reference experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExperimentKind {
    Sg1dCompare,
    ExpWave,
    Sg2d,
    KgParam,
    Kgz,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::Sg1dCompare,
        ExperimentKind::ExpWave,
        ExperimentKind::Sg2d,
        ExperimentKind::KgParam,
        ExperimentKind::Kgz,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Sg1dCompare => "sg1d-compare",
            ExperimentKind::ExpWave => "exp-wave",
            ExperimentKind::Sg2d => "sg2d",
            ExperimentKind::KgParam => "kg-param",
            ExperimentKind::Kgz => "kgz",
        }
    }

    pub fn model(&self) -> ModelId {
        match self {
            ExperimentKind::Sg1dCompare => ModelId::SineGordon1d,
            ExperimentKind::ExpWave => ModelId::ExponentialWave,
            ExperimentKind::Sg2d => ModelId::SineGordon2d,
            ExperimentKind::KgParam => ModelId::KleinGordon2d,
            ExperimentKind::Kgz => ModelId::Kgz,
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

/// Reduction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Psd,
    /// spDEIM with `factor · r` interpolation points.
    SpDeim { factor: usize },
    Lifting,
    StandardLifting,
    /// KGZ lifting with `V` from `[varphi, phi]` and a separate `V1` from `w`.
    LiftingSeparate,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Psd => "psd".into(),
            Method::SpDeim { factor: 1 } => "spdeim-r".into(),
            Method::SpDeim { factor } => format!("spdeim-{factor}r"),
            Method::Lifting => "lifting".into(),
            Method::StandardLifting => "standard-lifting".into(),
            Method::LiftingSeparate => "lifting-separate".into(),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(
            self,
            Method::Lifting | Method::StandardLifting | Method::LiftingSeparate
        )
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `psd`, `lifting`, `standard-lifting`, `lifting-separate`, and
    /// `spdeim(r)`, `spdeim(2r)`, ... (also `spdeim-2r`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "psd" => return Ok(Method::Psd),
            "lifting" => return Ok(Method::Lifting),
            "standard-lifting" => return Ok(Method::StandardLifting),
            "lifting-separate" => return Ok(Method::LiftingSeparate),
            _ => {}
        }
        let inner = s
            .strip_prefix("spdeim(")
            .and_then(|x| x.strip_suffix(')'))
            .or_else(|| s.strip_prefix("spdeim-"))
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))?;
        let digits = inner
            .strip_suffix('r')
            .ok_or_else(|| Error::Config(format!("spdeim size must be a multiple of r: {s:?}")))?;
        let factor = if digits.is_empty() {
            1
        } else {
            digits
                .parse()
                .map_err(|_| Error::Config(format!("bad spdeim factor in {s:?}")))?
        };
        if factor == 0 {
            return Err(Error::Config("spdeim factor must be positive".into()));
        }
        Ok(Method::SpDeim { factor })
    }
}

/// Integrator for the quadratic (lifted) ROMs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomIntegrator {
    Midpoint,
    Kahan,
}

impl FromStr for RomIntegrator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "midpoint" => Ok(RomIntegrator::Midpoint),
            "kahan" => Ok(RomIntegrator::Kahan),
            other => Err(Error::Config(format!("unknown integrator {other:?}"))),
        }
    }
}

impl fmt::Display for RomIntegrator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RomIntegrator::Midpoint => "midpoint",
            RomIntegrator::Kahan => "kahan",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub nx: usize,
    pub ny: usize,
    /// Domain override `(lower, upper)` applied to every axis.
    pub domain: Option<(f64, f64)>,
    pub boundary: Option<Boundary>,
    pub dt: f64,
    pub train_end: f64,
    /// Equal to `train_end` when there is no time-extrapolation window.
    pub test_end: f64,
    /// Snapshot stride; `None` picks 1 for `n ≤ 10⁴` and 10 above.
    pub stride: Option<usize>,
    /// Reported reduced dimensions: `2r` for canonical models, `6r` for KGZ.
    pub dims: Vec<usize>,
    pub methods: Vec<Method>,
    pub integrator: RomIntegrator,
    pub mu_train: Vec<f64>,
    pub mu_test: Vec<f64>,
    /// Repetitions for the online wall-time median.
    pub timing_runs: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub native_scale: bool,
    pub persist_snapshots: bool,
    pub energy_series: bool,
}

/// `count` equidistant values in `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|k| lo + (hi - lo) * k as f64 / (count - 1) as f64)
            .collect(),
    }
}

impl ExperimentConfig {
    /// Defaults of each reference experiment at desk or native scale.
    pub fn preset(kind: ExperimentKind, native_scale: bool) -> Self {
        let base = ExperimentConfig {
            kind,
            nx: 200,
            ny: 1,
            domain: None,
            boundary: None,
            dt: 0.005,
            train_end: 10.0,
            test_end: 10.0,
            stride: None,
            dims: Vec::new(),
            methods: Vec::new(),
            integrator: RomIntegrator::Kahan,
            mu_train: Vec::new(),
            mu_test: Vec::new(),
            timing_runs: 5,
            out_dir: PathBuf::from("out").join(kind.as_str()),
            seed: 0,
            native_scale,
            persist_snapshots: false,
            energy_series: true,
        };
        let even = |lo: usize, hi: usize| (lo..=hi).step_by(2).collect::<Vec<_>>();
        match kind {
            ExperimentKind::Sg1dCompare => ExperimentConfig {
                train_end: 15.0,
                test_end: 15.0,
                dims: even(4, 20),
                methods: vec![Method::Lifting, Method::StandardLifting],
                integrator: RomIntegrator::Midpoint,
                ..base
            },
            ExperimentKind::ExpWave => ExperimentConfig {
                test_end: 100.0,
                dims: even(4, 20),
                methods: vec![Method::Psd, Method::SpDeim { factor: 1 }, Method::Lifting],
                ..base
            },
            ExperimentKind::Sg2d => {
                let n = if native_scale { 100 } else { 48 };
                ExperimentConfig {
                    nx: n,
                    ny: n,
                    dt: 0.01,
                    test_end: 12.5,
                    dims: even(10, 40).into_iter().step_by(3).collect(),
                    methods: vec![
                        Method::Psd,
                        Method::SpDeim { factor: 1 },
                        Method::SpDeim { factor: 2 },
                        Method::Lifting,
                    ],
                    ..base
                }
            }
            ExperimentKind::KgParam => {
                let n = if native_scale { 100 } else { 48 };
                ExperimentConfig {
                    nx: n,
                    ny: n,
                    dt: 0.1,
                    train_end: 8.0,
                    test_end: 8.0,
                    dims: even(40, 60).into_iter().step_by(2).collect(),
                    methods: vec![
                        Method::Psd,
                        Method::SpDeim { factor: 2 },
                        Method::SpDeim { factor: 4 },
                        Method::Lifting,
                    ],
                    mu_train: linspace(0.1, 1.0, 10),
                    mu_test: vec![1.1, 1.2, 1.3, 1.4],
                    ..base
                }
            }
            ExperimentKind::Kgz => {
                let n = if native_scale { 400 } else { 64 };
                ExperimentConfig {
                    nx: n,
                    ny: n,
                    dt: 0.01,
                    train_end: 4.0,
                    test_end: 5.0,
                    dims: vec![12, 24, 36, 48, 60],
                    methods: vec![Method::Psd, Method::Lifting],
                    ..base
                }
            }
        }
    }

    /// Preset of `[experiment] kind` with every other key applied on top.
    /// `native_scale` swaps the preset grid before overrides.
    pub fn from_doc(doc: &ConfigDoc, native_scale: bool) -> Result<Self> {
        let kind: ExperimentKind = doc
            .get("experiment", "kind")
            .ok_or_else(|| Error::Config("missing [experiment] kind".into()))?
            .parse()?;
        let mut cfg = Self::preset(kind, native_scale);
        for (section, key) in doc.keys() {
            let value = doc.get(section, key).unwrap_or_default();
            cfg.apply(section, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str, native_scale: bool) -> Result<Self> {
        Self::from_doc(&ConfigDoc::parse(text)?, native_scale)
    }

    pub fn load(path: &Path, native_scale: bool) -> Result<Self> {
        Self::from_doc(&ConfigDoc::load(path)?, native_scale)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match (section, key) {
            ("experiment", "kind") => {}
            ("experiment", "seed") => self.seed = parse_value(section, key, value)?,
            ("grid", "nx") => self.nx = parse_value(section, key, value)?,
            ("grid", "ny") => self.ny = parse_value(section, key, value)?,
            ("grid", "lower") => {
                let lo = parse_value(section, key, value)?;
                self.domain = Some((lo, self.domain_or_default()?.1));
            }
            ("grid", "upper") => {
                let hi = parse_value(section, key, value)?;
                self.domain = Some((self.domain_or_default()?.0, hi));
            }
            ("grid", "boundary") => {
                self.boundary = Some(match value {
                    "periodic" => Boundary::Periodic,
                    "dirichlet" => Boundary::DirichletZero,
                    other => {
                        return Err(Error::Config(format!("grid.boundary: unknown {other:?}")))
                    }
                })
            }
            ("time", "dt") => self.dt = parse_value(section, key, value)?,
            ("time", "train_end") => self.train_end = parse_value(section, key, value)?,
            ("time", "test_end") => self.test_end = parse_value(section, key, value)?,
            ("time", "stride") => self.stride = Some(parse_value(section, key, value)?),
            ("rom", "dims") => self.dims = parse_list(section, key, value)?,
            ("rom", "methods") => self.methods = parse_list(section, key, value)?,
            ("rom", "integrator") => self.integrator = value.parse()?,
            ("rom", "timing_runs") => self.timing_runs = parse_value(section, key, value)?,
            ("parameters", "mu_train") => self.mu_train = parse_list(section, key, value)?,
            ("parameters", "mu_test") => self.mu_test = parse_list(section, key, value)?,
            ("output", "dir") => self.out_dir = PathBuf::from(value),
            ("output", "persist_snapshots") => {
                self.persist_snapshots = parse_value(section, key, value)?
            }
            ("output", "energy_series") => self.energy_series = parse_value(section, key, value)?,
            _ => return Err(Error::Config(format!("unknown key {section}.{key}"))),
        }
        Ok(())
    }

    /// Model grid with the domain and boundary overrides applied.
    pub fn grid(&self) -> Result<SpatialGrid> {
        let model = self.kind.model();
        let default = model.default_grid(self.nx, self.ny)?;
        if self.domain.is_none() && self.boundary.is_none() {
            return Ok(default);
        }
        let (lo, hi) = self.domain_or_default()?;
        let boundary = self.boundary.unwrap_or(default.boundary());
        match default.dim() {
            1 => SpatialGrid::new_1d(self.nx, lo, hi, boundary),
            _ => SpatialGrid::new_2d(self.nx, self.ny, (lo, hi), (lo, hi), boundary),
        }
    }

    fn domain_or_default(&self) -> Result<(f64, f64)> {
        if let Some(d) = self.domain {
            return Ok(d);
        }
        let grid = self.kind.model().default_grid(3, 3)?;
        let axis = &grid.axes()[0];
        Ok((axis.lower, axis.upper))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.train_end > 0.0) || self.test_end < self.train_end {
            return bad(format!(
                "need 0 < train_end <= test_end, got {} and {}",
                self.train_end, self.test_end
            ));
        }
        if self.methods.is_empty() {
            return bad("methods must be nonempty".into());
        }
        if self.dims.is_empty() {
            return bad("dims must be nonempty".into());
        }
        let block = if self.kind == ExperimentKind::Kgz { 6 } else { 2 };
        if let Some(d) = self.dims.iter().find(|&&d| d == 0 || d % block != 0) {
            return bad(format!("reduced dimension {d} is not a positive multiple of {block}"));
        }
        if self.timing_runs == 0 || self.stride == Some(0) {
            return bad("timing_runs and stride must be positive".into());
        }
        let mus = self.mu_train.iter().chain(&self.mu_test);
        if let Some(mu) = mus.clone().find(|&&m| !(0.1 - 1e-12..=1.4 + 1e-12).contains(&m)) {
            return bad(format!("mu = {mu} outside [0.1, 1.4]"));
        }
        if self.kind == ExperimentKind::KgParam && (self.mu_train.is_empty() || self.mu_test.is_empty()) {
            return bad("kg-param needs mu_train and mu_test".into());
        }
        for m in &self.methods {
            let ok = match self.kind {
                ExperimentKind::Kgz => matches!(m, Method::Psd | Method::Lifting | Method::LiftingSeparate),
                ExperimentKind::Sg1dCompare | ExperimentKind::Sg2d => *m != Method::LiftingSeparate,
                _ => !matches!(m, Method::StandardLifting | Method::LiftingSeparate),
            };
            if !ok {
                return bad(format!("method {m} is not available for {}", self.kind));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        if self.kind.model() == ModelId::SineGordon1d || self.kind.model() == ModelId::ExponentialWave {
            self.nx
        } else {
            self.nx * self.ny
        }
    }

    /// Explicit stride, or 1 up to `n = 10⁴` and 10 above.
    pub fn snapshot_stride(&self) -> usize {
        self.stride
            .unwrap_or(if self.n() <= 10_000 { 1 } else { 10 })
    }

    /// Key-value dump of the effective configuration.
    pub fn describe(&self) -> String {
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut s = String::new();
        s += &format!("[experiment]\nkind = {}\nseed = {}\n", self.kind, self.seed);
        s += &format!("native_scale = {}\n", self.native_scale);
        s += &format!("\n[grid]\nnx = {}\nny = {}\n", self.nx, self.ny);
        if let Some((lo, hi)) = self.domain {
            s += &format!("lower = {lo}\nupper = {hi}\n");
        }
        if let Some(b) = self.boundary {
            let name = if b == Boundary::Periodic { "periodic" } else { "dirichlet" };
            s += &format!("boundary = {name}\n");
        }
        s += &format!(
            "\n[time]\ndt = {}\ntrain_end = {}\ntest_end = {}\nstride = {}\n",
            self.dt,
            self.train_end,
            self.test_end,
            self.snapshot_stride()
        );
        s += &format!(
            "\n[rom]\ndims = {}\nmethods = {}\nintegrator = {}\ntiming_runs = {}\n",
            self.dims
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(", "),
            self.methods
                .iter()
                .map(Method::label)
                .collect::<Vec<_>>()
                .join(", "),
            self.integrator,
            self.timing_runs
        );
        if !self.mu_train.is_empty() {
            s += &format!(
                "\n[parameters]\nmu_train = {}\nmu_test = {}\n",
                list(&self.mu_train),
                list(&self.mu_test)
            );
        }
        s += &format!("\n# efficacy admission threshold {}\n", crate::metrics::EFFICACY_THRESHOLD);
        s
    }
}
