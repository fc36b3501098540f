//! Scenario configuration: one JSON document with a section per module,
//! command-line overrides by dotted path, and strict key checking.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::filter::{ResamplePolicy, WalkScaling};
use crate::hilbert_gp::Hyperparameters;
use crate::models::{BatteryParams, InputSchedule, TargetFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub family: TargetFamily,
    pub battery: BatteryParams,
    pub dt: f64,
    pub x0: Vec<f64>,
    pub input: InputSchedule,
    /// Diagonal of the state process-noise covariance `Q`.
    pub process_noise: Vec<f64>,
    /// Diagonal of the measurement-noise covariance `R`.
    pub measurement_noise: Vec<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let battery = BatteryParams::default();
        Self {
            family: TargetFamily::BatteryAlpha,
            battery,
            dt: 0.01,
            x0: vec![0.5, 0.0, battery.t_a],
            input: InputSchedule::default(),
            process_noise: vec![1e-5; 3],
            measurement_noise: vec![1e-2; 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OfflineConfig {
    /// Realizations `j = 1..=J`.
    pub realizations: usize,
    /// Samples per realization `K`, on a uniform grid over the data range.
    pub samples: usize,
    pub sigma_xi: f64,
    /// Data range; `null` means the family's own domain.
    pub data_lower: Option<f64>,
    pub data_upper: Option<f64>,
    /// Ω extends the data range by this fraction of its width on each side.
    pub padding: f64,
    /// Original basis size `N`.
    pub basis_count: usize,
    /// Conditioned rank `M`; when `null` the energy threshold decides.
    pub rank: Option<usize>,
    pub energy_threshold: f64,
    pub optimize_hyperparameters: bool,
    /// Fixed hyperparameters, or the unused template when optimizing.
    pub hyper: Hyperparameters,
    /// Error grid range; `null` means the family's domain.
    pub error_lower: Option<f64>,
    pub error_upper: Option<f64>,
    pub error_points: usize,
    /// Largest DOF count of the sweep; `null` means `N`.
    pub sweep_max_dof: Option<usize>,
    pub seed: u64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        Self {
            realizations: 10,
            samples: 200,
            sigma_xi: 0.01,
            data_lower: None,
            data_upper: None,
            padding: 0.25,
            basis_count: 50,
            rank: Some(2),
            energy_threshold: 0.99,
            optimize_hyperparameters: true,
            hyper: Hyperparameters {
                sigma2: 100.0,
                l: 0.2,
                sigma_xi2: 1e-4,
            },
            error_lower: None,
            error_upper: None,
            error_points: 201,
            sweep_max_dof: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub np: usize,
    /// Exploration scale `c` of the coefficient random walk.
    pub c: f64,
    /// Random-walk variance `c σ_m` or `c σ_m²`.
    pub walk_scaling: WalkScaling,
    pub lambda_f: f64,
    pub nu0: f64,
    /// Diagonal of `Λ0`.
    pub lambda0: Vec<f64>,
    /// Offset of the x-prior mean from the true initial state.
    pub x_prior_offset: Vec<f64>,
    /// Diagonal of the x-prior covariance.
    pub x_prior_var: Vec<f64>,
    /// Realization whose projected coefficients centre the v-prior.
    pub init_j: f64,
    pub resample: ResamplePolicy,
    pub parallel: bool,
    /// Learn all `N` original coefficients instead of the conditioned `v`.
    pub baseline_original: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            np: 100,
            c: 3e-5,
            walk_scaling: WalkScaling::SquaredSingularValues,
            lambda_f: 0.995,
            nu0: 3.0,
            lambda0: vec![1.0; 3],
            x_prior_offset: vec![0.0; 3],
            x_prior_var: vec![1e-4, 1e-4, 1e-2],
            init_j: 5.0,
            resample: ResamplePolicy::Always,
            parallel: false,
            baseline_original: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub switch_step: usize,
    pub j_before: f64,
    pub j_after: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            switch_step: 1000,
            j_before: 1.0,
            j_after: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: String,
    pub name: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            name: "battery".into(),
        }
    }
}

/// Full experiment description. The default is the battery scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Base seed of the online runs; run `r` of a study uses `seed + r`.
    pub seed: u64,
    pub runs: usize,
    pub model: ModelConfig,
    pub offline: OfflineConfig,
    pub filter: FilterConfig,
    pub schedule: ScheduleConfig,
    pub output: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            runs: 50,
            model: ModelConfig::default(),
            offline: OfflineConfig::default(),
            filter: FilterConfig::default(),
            schedule: ScheduleConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Every configuration key with its meaning and unit, for help output.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("seed", "base seed of the online runs (run r uses seed + r)"),
    ("runs", "Monte-Carlo run count"),
    ("model.family", "target family: battery_alpha | sinc | sinc_unnormalized"),
    ("model.battery.v0_offset", "open-circuit voltage at z = 0 [V]"),
    ("model.battery.v0_slope", "open-circuit voltage slope in z [V]"),
    ("model.battery.beta", "input gain of the V1 dynamics [V/(A s)]"),
    ("model.battery.r0", "series resistance [Ohm]"),
    ("model.battery.q_bat", "capacity [A s]"),
    ("model.battery.c_c", "core heat capacity [J/K]"),
    ("model.battery.r_c", "thermal resistance [K/W]"),
    ("model.battery.t_a", "ambient temperature [K]"),
    ("model.dt", "RK4 step [s]"),
    ("model.x0", "initial state (z [-], V1 [V], Tc [K])"),
    ("model.input.amplitude", "current amplitude [A]"),
    ("model.input.frequency", "current frequency [Hz]"),
    ("model.input.offset", "current offset [A]"),
    ("model.process_noise", "diagonal of Q (z [-]^2, V1 [V^2], Tc [K^2])"),
    ("model.measurement_noise", "diagonal of R (output units squared)"),
    ("offline.realizations", "realization count J (j = 1..J)"),
    ("offline.samples", "samples per realization K"),
    ("offline.sigma_xi", "offline observation noise std [target units]"),
    ("offline.data_lower", "lower end of the data range [input units]; null = family domain"),
    ("offline.data_upper", "upper end of the data range [input units]; null = family domain"),
    ("offline.padding", "total domain widening, split over both sides [fraction of data width]"),
    ("offline.basis_count", "original basis size N"),
    ("offline.rank", "conditioned rank M; null = use the energy threshold"),
    ("offline.energy_threshold", "explained-energy threshold for M [fraction]"),
    ("offline.optimize_hyperparameters", "maximize the marginal likelihood (true/false)"),
    ("offline.hyper.sigma2", "SE prior variance [target units^2]"),
    ("offline.hyper.l", "SE length scale [input units]"),
    ("offline.hyper.sigma_xi2", "GP noise variance [target units^2]"),
    ("offline.error_lower", "lower end of the error grid [input units]; null = family domain"),
    ("offline.error_upper", "upper end of the error grid [input units]; null = family domain"),
    ("offline.error_points", "error grid size"),
    ("offline.sweep_max_dof", "largest DOF count of the sweep; null = N"),
    ("offline.seed", "seed of the offline dataset"),
    ("filter.np", "particle count Np"),
    ("filter.c", "coefficient random-walk scale c [-]"),
    ("filter.walk_scaling", "coefficient random-walk variance: squared_singular_values (c sigma^2) | singular_values (c sigma)"),
    ("filter.lambda_f", "forgetting factor in (0, 1]"),
    ("filter.nu0", "initial inverse-Wishart degrees of freedom"),
    ("filter.lambda0", "diagonal of the initial inverse-Wishart scale (output units squared)"),
    ("filter.x_prior_offset", "x-prior mean minus the true initial state (state units)"),
    ("filter.x_prior_var", "diagonal of the x-prior covariance (state units squared)"),
    ("filter.init_j", "realization whose coefficients centre the v-prior"),
    ("filter.resample.kind", "always | ess_below (then filter.resample.threshold [fraction of Np])"),
    ("filter.parallel", "run the particle loop on all cores (true/false)"),
    ("filter.baseline_original", "learn the N original coefficients instead of v (true/false)"),
    ("schedule.steps", "total online steps"),
    ("schedule.switch_step", "step at which j switches"),
    ("schedule.j_before", "true j before the switch"),
    ("schedule.j_after", "true j from the switch on"),
    ("output.dir", "output directory"),
    ("output.name", "study name used in run directory names"),
];

impl ScenarioConfig {
    /// Sinc-family setup: `J = 30` realizations on `[-12, 12]`, so that the
    /// padded domain is `[-15, 15]`; errors measured over `[-15, 15]`.
    pub fn sinc() -> Self {
        let mut cfg = Self::default();
        cfg.model.family = TargetFamily::Sinc;
        cfg.offline.realizations = 30;
        cfg.offline.rank = Some(6);
        cfg.offline.hyper = Hyperparameters {
            sigma2: 50.0,
            l: 3.0,
            sigma_xi2: 1e-4,
        };
        cfg.output.name = "sinc".into();
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        Self::from_value(value)
    }

    fn from_value(value: Value) -> Result<Self> {
        let cfg: Self = serde_json::from_value(value).map_err(|e| {
            let msg = e.to_string();
            let key = unknown_field(&msg).unwrap_or_else(|| "<document>".to_string());
            Error::config(key, msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides; values are parsed as JSON, falling
    /// back to a plain string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::config(item, "override must have the form key=value"))?;
            let key = key.trim();
            let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| {
            let key = overrides
                .iter()
                .filter_map(|o| o.as_ref().split_once('=').map(|(k, _)| k.trim().to_string()))
                .last()
                .unwrap_or_default();
            Error::config(key, e.to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks every setting against the preconditions of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(key, format!("must be a positive number, got {v}")))
            }
        };
        let diag = |key: &str, v: &[f64], n: usize, strict: bool| {
            if v.len() != n {
                return Err(Error::config(key, format!("must have {n} entries, got {}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite() || *x < 0.0 || (strict && *x == 0.0)) {
                let bound = if strict { "> 0" } else { ">= 0" };
                return Err(Error::config(key, format!("entries must be finite and {bound}")));
            }
            Ok(())
        };
        if self.runs == 0 {
            return Err(Error::config("runs", "must be >= 1"));
        }
        self.model.battery.validate()?;
        positive("model.dt", self.model.dt)?;
        if self.model.x0.len() != 3 || !(0.0..=1.0).contains(&self.model.x0[0]) {
            return Err(Error::config("model.x0", "must be [z, V1, Tc] with z in [0, 1]"));
        }
        diag("model.process_noise", &self.model.process_noise, 3, true)?;
        diag("model.measurement_noise", &self.model.measurement_noise, 3, false)?;

        let o = &self.offline;
        if o.realizations == 0 {
            return Err(Error::config("offline.realizations", "must be >= 1"));
        }
        if o.samples == 0 {
            return Err(Error::config("offline.samples", "must be >= 1"));
        }
        if !(o.sigma_xi >= 0.0 && o.sigma_xi.is_finite()) {
            return Err(Error::config("offline.sigma_xi", "must be >= 0"));
        }
        if !(o.padding > 0.0 && o.padding.is_finite()) {
            return Err(Error::config("offline.padding", "must be > 0 so data stays inside the domain"));
        }
        if o.basis_count == 0 {
            return Err(Error::config("offline.basis_count", "must be >= 1"));
        }
        if o.rank == Some(0) {
            return Err(Error::config("offline.rank", "must be >= 1"));
        }
        if !(o.energy_threshold > 0.0 && o.energy_threshold <= 1.0) {
            return Err(Error::config("offline.energy_threshold", "must lie in (0, 1]"));
        }
        o.hyper.validate().map_err(|e| Error::config("offline.hyper", e.to_string()))?;
        if o.error_points < 2 {
            return Err(Error::config("offline.error_points", "must be >= 2"));
        }
        let (dl, du) = self.data_range();
        if !(dl < du) {
            return Err(Error::config("offline.data_lower", "data range must satisfy lower < upper"));
        }
        let (el, eu) = self.error_range();
        if !(el < eu) {
            return Err(Error::config("offline.error_lower", "error range must satisfy lower < upper"));
        }
        let (ol, ou) = self.domain_bounds();
        if el < ol || eu > ou {
            return Err(Error::config(
                "offline.error_lower",
                format!("error range [{el}, {eu}] must lie inside the domain [{ol}, {ou}]"),
            ));
        }
        if o.sweep_max_dof.is_some_and(|d| d == 0 || d > o.basis_count) {
            return Err(Error::config("offline.sweep_max_dof", "must lie in 1..=offline.basis_count"));
        }

        let f = &self.filter;
        if f.np == 0 {
            return Err(Error::config("filter.np", "must be >= 1"));
        }
        positive("filter.c", f.c)?;
        if !(f.lambda_f > 0.0 && f.lambda_f <= 1.0) {
            return Err(Error::config("filter.lambda_f", "must lie in (0, 1]"));
        }
        if !(f.nu0.is_finite() && f.nu0 > 2.0) {
            return Err(Error::config("filter.nu0", "must exceed n_y - 1 = 2"));
        }
        diag("filter.lambda0", &f.lambda0, 3, true)?;
        if f.x_prior_offset.len() != 3 || f.x_prior_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("filter.x_prior_offset", "must have 3 finite entries"));
        }
        diag("filter.x_prior_var", &f.x_prior_var, 3, true)?;
        if let ResamplePolicy::EssBelow { threshold } = f.resample {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::config("filter.resample.threshold", "must lie in (0, 1]"));
            }
        }

        let s = &self.schedule;
        if s.steps == 0 {
            return Err(Error::config("schedule.steps", "must be >= 1"));
        }
        if self.output.name.is_empty() || self.output.name.contains(['/', '\\']) {
            return Err(Error::config("output.name", "must be a non-empty plain file name"));
        }
        Ok(())
    }

    pub fn data_range(&self) -> (f64, f64) {
        let (lo, hi) = self.model.family.domain();
        (self.offline.data_lower.unwrap_or(lo), self.offline.data_upper.unwrap_or(hi))
    }

    pub fn error_range(&self) -> (f64, f64) {
        let (lo, hi) = self.model.family.domain();
        (self.offline.error_lower.unwrap_or(lo), self.offline.error_upper.unwrap_or(hi))
    }

    /// Bounds of Ω: the data range widened by `padding` of its width,
    /// half on each side.
    pub fn domain_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.data_range();
        let pad = 0.5 * self.offline.padding * (hi - lo);
        (lo - pad, hi + pad)
    }

    /// Realization values `j = 1..=J`.
    pub fn j_values(&self) -> Vec<f64> {
        (1..=self.offline.realizations).map(|j| j as f64).collect()
    }
}

fn unknown_field(msg: &str) -> Option<String> {
    let rest = msg.strip_prefix("unknown field `")?;
    Some(rest.split('`').next()?.to_string())
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(Error::config(key, "unknown configuration key"));
        };
        let Some(child) = map.get_mut(*part) else {
            return Err(Error::config(key, "unknown configuration key"));
        };
        if i + 1 == parts.len() {
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Err(Error::config(key, "empty configuration key"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_keys(value: &Value, prefix: &str, out: &mut Vec<String>) {
        match value {
            Value::Object(map) => {
                for (k, v) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    leaf_keys(v, &key, out);
                }
            }
            _ => out.push(prefix.to_string()),
        }
    }

    #[test]
    fn defaults_are_valid() {
        ScenarioConfig::default().validate().unwrap();
        ScenarioConfig::sinc().validate().unwrap();
        assert_eq!(ScenarioConfig::sinc().domain_bounds(), (-18.75, 18.75));
    }

    #[test]
    fn every_key_is_documented() {
        let mut keys = Vec::new();
        leaf_keys(&serde_json::to_value(ScenarioConfig::default()).unwrap(), "", &mut keys);
        for key in keys {
            assert!(CONFIG_KEYS.iter().any(|(k, _)| *k == key), "undocumented key {key}");
        }
    }

    #[test]
    fn overrides_by_dotted_path() {
        let cfg = ScenarioConfig::default()
            .with_overrides(&["runs=7", "seed=9", "filter.np=20", "model.family=sinc", "offline.rank=null"])
            .unwrap();
        assert_eq!(cfg.runs, 7);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.filter.np, 20);
        assert_eq!(cfg.model.family, TargetFamily::Sinc);
        assert_eq!(cfg.offline.rank, None);
    }

    #[test]
    fn unknown_override_names_the_key() {
        let err = ScenarioConfig::default().with_overrides(&["npp=5"]).unwrap_err();
        match err {
            Error::Config { key, .. } => assert_eq!(key, "npp"),
            other => panic!("unexpected {other:?}"),
        }
        let err = ScenarioConfig::default().with_overrides(&["filter.npp=5"]).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "filter.npp"));
    }

    #[test]
    fn invalid_values_name_the_key() {
        let err = ScenarioConfig::default().with_overrides(&["filter.lambda_f=1.5"]).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "filter.lambda_f"));
        let err = ScenarioConfig::default().with_overrides(&["filter.np=abc"]).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "filter.np"));
    }

    #[test]
    fn unknown_document_field_is_named() {
        let err = ScenarioConfig::from_json(r#"{"filter": {"npp": 5}}"#).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "npp"));
    }

    #[test]
    fn json_round_trip() {
        let cfg = ScenarioConfig::sinc();
        let text = crate::io::to_json_string(&cfg).unwrap();
        assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
    }
}
