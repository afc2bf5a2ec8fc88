//! Run configuration: a TOML document of flat dotted keys plus `--set`
//! overrides. Everything is validated before any computation starts.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use cvtp_core::model::{FilterSpec, PriorSpec, SurrogateParams};
use cvtp_core::oracle::{Estimator, OracleConfig};
use cvtp_core::quadrature::QuadConfig;

/// A configuration problem, tagged with the offending key path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub key: String,
    pub message: String,
}

impl ConfigError {
    fn new(key: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            key: key.into(),
            message: message.to_string(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.key, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub g: Vec<f64>,
    pub m_c: Vec<f64>,
    /// Prepend the accept-all control row.
    pub include_control: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    /// Explicit radii; otherwise `points` equally spaced radii on `[0, r_max]`.
    pub radii: Option<Vec<f64>>,
    pub r_max: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeSpec {
    /// Defaults to `3σ`.
    pub m_c: Option<f64>,
    pub thetas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSpec {
    /// `(g, m_c)` settings for the per-protocol checks.
    pub settings: Vec<(f64, f64)>,
    pub lambdas: Vec<f64>,
    /// Effective-prior samples for the concentration checks.
    pub samples: usize,
    /// Inner samples of the point-level oracle check.
    pub point_n_inner: usize,
    pub skip: Vec<String>,
    /// Test hook: shifts the expected flat-profile baseline.
    pub inject_f0_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub params: SurrogateParams,
    pub prior: PriorSpec,
    pub filter: FilterSpec,
    pub grid: GridSpec,
    pub profile: ProfileSpec,
    pub quad: QuadConfig,
    pub oracle: OracleConfig,
    pub lambda: f64,
    /// Fidelity slack of the throughput bound.
    pub delta: f64,
    pub slope_step: f64,
    pub d_max: f64,
    pub p_min: f64,
    pub slope: SlopeSpec,
    pub check: CheckSpec,
}

pub const CHECK_NAMES: [&str; 9] = [
    "flatness",
    "futility",
    "tail_bound",
    "phase_invariance",
    "jensen",
    "oracle_point",
    "oracle_ensemble",
    "concentration",
    "slope_linearity",
];

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            params: SurrogateParams::reference(),
            prior: PriorSpec::default(),
            filter: FilterSpec::mbnla(1.2, 3.0).expect("valid default filter"),
            grid: GridSpec {
                g: vec![1.2, 1.4, 1.6],
                m_c: vec![1.8, 2.2, 2.6, 3.0],
                include_control: false,
            },
            profile: ProfileSpec {
                radii: None,
                r_max: None,
                points: 121,
            },
            quad: QuadConfig::default(),
            oracle: OracleConfig::default(),
            lambda: 3.0,
            delta: 0.1,
            slope_step: cvtp_core::ensemble::DEFAULT_SLOPE_STEP,
            d_max: f64::INFINITY,
            p_min: 0.0,
            slope: SlopeSpec {
                m_c: None,
                thetas: vec![0.005, 0.01, 0.02, 0.04],
            },
            check: CheckSpec {
                settings: vec![(1.2, 3.0), (1.4, 2.2), (1.6, 1.8)],
                lambdas: vec![1.0, 2.0, 3.0],
                samples: 10_000,
                point_n_inner: 1_000_000,
                skip: Vec::new(),
                inject_f0_offset: 0.0,
            },
        }
    }
}

/// Flattened `key → value` view of the document.
pub type FlatDoc = BTreeMap<String, toml::Value>;

fn flatten(prefix: &str, table: &toml::Table, out: &mut FlatDoc) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

pub fn parse_document(text: &str) -> Result<FlatDoc> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::new("", e.message()))?;
    let mut out = FlatDoc::new();
    flatten("", &table, &mut out);
    Ok(out)
}

pub fn read_document(path: &Path) -> Result<FlatDoc> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::new("", format!("cannot read {}: {e}", path.display())))?;
    parse_document(&text).map_err(|e| ConfigError::new(e.key, format!("{} (in {})", e.message, path.display())))
}

/// Parses `key=value`; the value is read as a TOML value and falls back to a
/// bare string.
pub fn parse_override(spec: &str) -> Result<(String, toml::Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| ConfigError::new("", format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::new("", format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    Ok((key.to_string(), value))
}

struct Reader {
    doc: FlatDoc,
}

impl Reader {
    fn take(&mut self, key: &str) -> Option<toml::Value> {
        self.doc.remove(key)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.opt_f64(key)?.unwrap_or(default))
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key).map(|v| as_f64(key, &v)).transpose()
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(i as usize),
            Some(v) => Err(ConfigError::new(key, format!("expected a nonnegative integer, got {v}"))),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(toml::Value::Integer(i)) if i >= 0 => Ok(i as u64),
            Some(toml::Value::String(s)) => s
                .parse()
                .map_err(|_| ConfigError::new(key, format!("expected an unsigned integer, got `{s}`"))),
            Some(v) => Err(ConfigError::new(key, format!("expected an unsigned integer, got {v}"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(toml::Value::Boolean(b)) => Ok(b),
            Some(v) => Err(ConfigError::new(key, format!("expected true or false, got {v}"))),
        }
    }

    fn string(&mut self, key: &str) -> Result<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(ConfigError::new(key, format!("expected a string, got {v}"))),
        }
    }

    fn f64_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| as_f64(&format!("{key}[{i}]"), v))
                .collect::<Result<_>>()
                .map(Some),
            Some(v) => Err(ConfigError::new(key, format!("expected an array of numbers, got {v}"))),
        }
    }

    fn pair_list(&mut self, key: &str) -> Result<Option<Vec<(f64, f64)>>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .iter()
                .enumerate()
                .map(|(i, v)| match v {
                    toml::Value::Array(p) if p.len() == 2 => {
                        let k = format!("{key}[{i}]");
                        Ok((as_f64(&k, &p[0])?, as_f64(&k, &p[1])?))
                    }
                    other => Err(ConfigError::new(format!("{key}[{i}]"), format!("expected a [g, m_c] pair, got {other}"))),
                })
                .collect::<Result<_>>()
                .map(Some),
            Some(v) => Err(ConfigError::new(key, format!("expected an array of [g, m_c] pairs, got {v}"))),
        }
    }

    fn string_list(&mut self, key: &str) -> Result<Option<Vec<String>>> {
        match self.take(key) {
            None => Ok(None),
            Some(toml::Value::Array(a)) => a
                .into_iter()
                .enumerate()
                .map(|(i, v)| match v {
                    toml::Value::String(s) => Ok(s),
                    other => Err(ConfigError::new(format!("{key}[{i}]"), format!("expected a string, got {other}"))),
                })
                .collect::<Result<_>>()
                .map(Some),
            Some(v) => Err(ConfigError::new(key, format!("expected an array of strings, got {v}"))),
        }
    }
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(x) => Ok(*x),
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::String(s) if s == "inf" || s == "+inf" => Ok(f64::INFINITY),
        other => Err(ConfigError::new(key, format!("expected a number, got {other}"))),
    }
}

fn positive(key: &str, x: f64) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(ConfigError::new(key, format!("must be finite and > 0, got {x}")))
    }
}

impl RunConfig {
    /// Builds a validated configuration from a flattened document. Unknown
    /// keys are rejected.
    pub fn from_document(doc: FlatDoc) -> Result<Self> {
        let d = Self::default();
        let mut r = Reader { doc };

        let v_n = r.f64("params.V_n", d.params.v_n())?;
        let v_eps = r.f64("params.V_eps", d.params.v_eps())?;
        let kappa = r.f64("params.kappa", d.params.kappa())?;
        let params = SurrogateParams::new(v_n, v_eps, kappa).map_err(|e| ConfigError::new("params", e))?;
        let prior = PriorSpec::new(r.f64("prior.sigma", d.prior.sigma())?).map_err(|e| ConfigError::new("prior.sigma", e))?;

        let kind = r.string("filter.kind")?.unwrap_or_else(|| "mbnla".into());
        let g = r.f64("filter.g", 1.2)?;
        let m_c = r.f64("filter.m_c", 3.0)?;
        let filter = match kind.to_ascii_lowercase().as_str() {
            "mbnla" | "mb-nla" | "mb_nla" => FilterSpec::mbnla(g, m_c).map_err(|e| ConfigError::new("filter", e))?,
            "accept_all" | "acceptall" | "control" => FilterSpec::AcceptAll,
            other => return Err(ConfigError::new("filter.kind", format!("expected `mbnla` or `accept_all`, got `{other}`"))),
        };
        if !filter.is_accept_all() && params.v_n() <= 0.0 {
            return Err(ConfigError::new("params.V_n", "an MB-NLA filter needs V_n > 0"));
        }

        let grid = GridSpec {
            g: r.f64_list("grid.g")?.unwrap_or(d.grid.g),
            m_c: r.f64_list("grid.m_c")?.unwrap_or(d.grid.m_c),
            include_control: r.bool("grid.include_control", false)?,
        };
        for (i, &g) in grid.g.iter().enumerate() {
            if !(g.is_finite() && g > 1.0) {
                return Err(ConfigError::new(format!("grid.g[{i}]"), format!("gain must be finite and > 1, got {g}")));
            }
        }
        for (i, &m) in grid.m_c.iter().enumerate() {
            positive(&format!("grid.m_c[{i}]"), m)?;
        }

        let profile = ProfileSpec {
            radii: r.f64_list("profile.radii")?,
            r_max: r.opt_f64("profile.r_max")?.map(|x| positive("profile.r_max", x)).transpose()?,
            points: r.usize("profile.points", d.profile.points)?,
        };
        if profile.points < 2 {
            return Err(ConfigError::new("profile.points", "must be >= 2"));
        }

        let quad = QuadConfig {
            radial_order: r.usize("quad.radial_order", d.quad.radial_order)?,
            angular_order: r.usize("quad.angular_order", d.quad.angular_order)?,
            panels: r.usize("quad.panels", d.quad.panels)?,
            rel_tol: r.f64("quad.rel_tol", d.quad.rel_tol)?,
            abs_tol: r.f64("quad.abs_tol", d.quad.abs_tol)?,
            prior_trunc_eps: r.f64("quad.prior_trunc_eps", d.quad.prior_trunc_eps)?,
            max_panels: r.usize("quad.max_panels", d.quad.max_panels)?,
        };
        quad.validate().map_err(|e| ConfigError::new("quad", e))?;

        let estimator = match r.string("oracle.estimator")? {
            None => d.oracle.estimator,
            Some(s) => s.parse::<Estimator>().map_err(|e| ConfigError::new("oracle.estimator", e))?,
        };
        let oracle = OracleConfig {
            seed: r.u64("oracle.seed", d.oracle.seed)?,
            n_outer: r.usize("oracle.n_outer", d.oracle.n_outer)?,
            n_inner: r.usize("oracle.n_inner", d.oracle.n_inner)?,
            estimator,
            jackknife: r.bool("oracle.jackknife", d.oracle.jackknife)?,
            bootstrap_resamples: r.usize("oracle.bootstrap_resamples", d.oracle.bootstrap_resamples)?,
        };
        oracle.validate().map_err(|e| ConfigError::new("oracle", e))?;

        let lambda = positive("lambda", r.f64("lambda", d.lambda)?)?;
        let delta = positive("delta", r.f64("delta", d.delta)?)?;
        let slope_step = positive("slope_step", r.f64("slope_step", d.slope_step)?)?;
        let d_max = r.f64("frontier.D_max", d.d_max)?;
        if d_max.is_nan() || d_max < 0.0 {
            return Err(ConfigError::new("frontier.D_max", format!("must be >= 0, got {d_max}")));
        }
        let p_min = r.f64("frontier.P_min", d.p_min)?;
        if !(0.0..=1.0).contains(&p_min) {
            return Err(ConfigError::new("frontier.P_min", format!("must lie in [0, 1], got {p_min}")));
        }

        let slope = SlopeSpec {
            m_c: r.opt_f64("slope.m_c")?.map(|x| positive("slope.m_c", x)).transpose()?,
            thetas: r.f64_list("slope.thetas")?.unwrap_or(d.slope.thetas),
        };
        if slope.thetas.len() < 4 {
            return Err(ConfigError::new("slope.thetas", "regression needs at least 4 values"));
        }

        let check = CheckSpec {
            settings: r.pair_list("check.settings")?.unwrap_or(d.check.settings),
            lambdas: r.f64_list("check.lambdas")?.unwrap_or(d.check.lambdas),
            samples: r.usize("check.samples", d.check.samples)?,
            point_n_inner: r.usize("check.point_n_inner", d.check.point_n_inner)?,
            skip: r.string_list("check.skip")?.unwrap_or_default(),
            inject_f0_offset: r.f64("check.inject_f0_offset", 0.0)?,
        };
        for (i, &(g, m)) in check.settings.iter().enumerate() {
            FilterSpec::mbnla(g, m).map_err(|e| ConfigError::new(format!("check.settings[{i}]"), e))?;
        }
        if check.settings.is_empty() {
            return Err(ConfigError::new("check.settings", "needs at least one setting"));
        }
        for (i, &l) in check.lambdas.iter().enumerate() {
            positive(&format!("check.lambdas[{i}]"), l)?;
        }
        if check.samples == 0 {
            return Err(ConfigError::new("check.samples", "must be >= 1"));
        }
        if check.point_n_inner < 1000 {
            return Err(ConfigError::new("check.point_n_inner", "must be >= 1000"));
        }
        for (i, name) in check.skip.iter().enumerate() {
            if !CHECK_NAMES.contains(&name.as_str()) {
                return Err(ConfigError::new(
                    format!("check.skip[{i}]"),
                    format!("unknown check `{name}` (known: {})", CHECK_NAMES.join(", ")),
                ));
            }
        }

        if let Some(key) = r.doc.keys().next() {
            return Err(ConfigError::new(key.clone(), "unknown key"));
        }
        Ok(Self {
            params,
            prior,
            filter,
            grid,
            profile,
            quad,
            oracle,
            lambda,
            delta,
            slope_step,
            d_max,
            p_min,
            slope,
            check,
        })
    }

    /// Reads an optional file, applies `key=value` overrides in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = match path {
            Some(p) => read_document(p)?,
            None => FlatDoc::new(),
        };
        for spec in overrides {
            let (k, v) = parse_override(spec)?;
            doc.insert(k, v);
        }
        Self::from_document(doc)
    }

    /// Radii of the profile grid.
    pub fn profile_radii(&self) -> Vec<f64> {
        if let Some(r) = &self.profile.radii {
            return r.clone();
        }
        let r_max = self.profile.r_max.unwrap_or(match self.filter.as_mbnla() {
            Some(f) => f.cutoff() + 3.0,
            None => 6.0,
        });
        let n = self.profile.points;
        (0..n).map(|i| r_max * i as f64 / (n - 1) as f64).collect()
    }

    pub fn slope_cutoff(&self) -> f64 {
        self.slope.m_c.unwrap_or(3.0 * self.prior.sigma())
    }

    pub fn skips(&self, check: &str) -> bool {
        self.check.skip.iter().any(|s| s == check)
    }
}
