//! Flat `key = value` files for model configurations and simulation scenarios.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys,
//! repeated keys and malformed values are errors that name the offending line.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use sace_core::model::{CoefficientPrior, IgPrior, ModelConfig, ModelVariant};
use sace_core::simulate::{CovariateSpec, Scenario};

use crate::error::{CliError, Result};

/// Parsed entries with their 1-based line numbers.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (u64, String)>,
    source: String,
}

impl KeyValues {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut kv = KeyValues {
            entries: BTreeMap::new(),
            source: source.to_string(),
        };
        for (i, raw) in text.lines().enumerate() {
            let line = (i + 1) as u64;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let Some((k, v)) = t.split_once('=') else {
                return Err(kv.error(line, format!("expected key = value, got '{t}'")));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(kv.error(line, "empty key".into()));
            }
            if let Some((first, _)) = kv.entries.get(&key) {
                return Err(kv.error(line, format!("key '{key}' repeats line {first}")));
            }
            kv.entries.insert(key, (line, v.trim().to_string()));
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn error(&self, line: u64, message: String) -> CliError {
        CliError::Parse {
            path: self.source.clone().into(),
            line,
            message,
        }
    }

    fn take(&mut self, key: &str) -> Option<(u64, String)> {
        self.entries.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|e| self.error(line, format!("{key}: cannot parse '{v}': {e}"))),
        }
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => match v.to_ascii_lowercase().as_str() {
                "true" | "1" | "yes" => Ok(Some(true)),
                "false" | "0" | "no" => Ok(Some(false)),
                _ => Err(self.error(line, format!("{key}: expected true or false, got '{v}'"))),
            },
        }
    }

    fn take_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|e| self.error(line, format!("{key}: {e}"))),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.iter().min_by_key(|(_, (line, _))| *line) {
            None => Ok(()),
            Some((k, (line, _))) => Err(self.error(*line, format!("unknown key '{k}'"))),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn read_ig(kv: &mut KeyValues, prefix: &str, slot: &mut IgPrior) -> Result<()> {
    set(&mut slot.shape, kv.take_parsed(&format!("{prefix}_shape"))?);
    set(&mut slot.rate, kv.take_parsed(&format!("{prefix}_rate"))?);
    Ok(())
}

fn read_coefficients(kv: &mut KeyValues, prefix: &str, slot: &mut CoefficientPrior) -> Result<()> {
    let mean = kv.take_parsed::<f64>(&format!("{prefix}.coef_mean"))?;
    let variance = kv.take_parsed::<f64>(&format!("{prefix}.coef_variance"))?;
    let mean_key = format!("{prefix}.coef_mean_vector");
    let cov_key = format!("{prefix}.coef_covariance");
    let line = kv
        .entries
        .get(&mean_key)
        .or(kv.entries.get(&cov_key))
        .map(|(l, _)| *l);
    let mean_vec = kv.take_list(&mean_key)?;
    let cov = kv.take_list(&cov_key)?;
    match (mean_vec, cov) {
        (None, None) => {
            if mean.is_some() || variance.is_some() {
                let (m0, v0) = match slot {
                    CoefficientPrior::Isotropic { mean, variance } => (*mean, *variance),
                    CoefficientPrior::Full { .. } => (0.0, 1000.0),
                };
                *slot = CoefficientPrior::Isotropic {
                    mean: mean.unwrap_or(m0),
                    variance: variance.unwrap_or(v0),
                };
            }
            Ok(())
        }
        (Some(m), Some(c)) => {
            let line = line.unwrap_or(0);
            if mean.is_some() || variance.is_some() {
                return Err(kv.error(
                    line,
                    format!("{prefix}: give either isotropic or full prior"),
                ));
            }
            let k = m.len();
            if c.len() != k * k {
                return Err(kv.error(
                    line,
                    format!(
                        "{cov_key}: need {} row-major entries, got {}",
                        k * k,
                        c.len()
                    ),
                ));
            }
            *slot = CoefficientPrior::Full {
                mean: DVector::from_vec(m),
                covariance: DMatrix::from_row_slice(k, k, &c),
            };
            Ok(())
        }
        _ => Err(kv.error(
            line.unwrap_or(0),
            format!("{mean_key} and {cov_key} go together"),
        )),
    }
}

/// Applies every model-configuration key in `kv` to `base`.
pub fn apply_model_keys(kv: &mut KeyValues, base: &mut ModelConfig) -> Result<()> {
    if let Some(v) = kv.take_parsed::<ModelVariant>("model")? {
        base.set_variant(v);
    }
    set(&mut base.ps_cluster_re, kv.take_bool("ps_cluster_re")?);
    set(
        &mut base.ps_clusterperiod_re,
        kv.take_bool("ps_clusterperiod_re")?,
    );
    set(
        &mut base.outcome_clusterperiod_re,
        kv.take_bool("outcome_clusterperiod_re")?,
    );
    set(&mut base.iterations, kv.take_parsed("iterations")?);
    set(&mut base.burn_in, kv.take_parsed("burn_in")?);
    set(&mut base.thinning, kv.take_parsed("thinning")?);
    set(&mut base.n_chains, kv.take_parsed("n_chains")?);
    set(&mut base.seed, kv.take_parsed("seed")?);
    set(
        &mut base.keep_coefficients,
        kv.take_bool("keep_coefficients")?,
    );
    let p = &mut base.priors;
    for (name, o) in [("always", &mut p.always), ("protected", &mut p.protected)] {
        let prefix = format!("prior.{name}");
        read_coefficients(kv, &prefix, &mut o.coefficients)?;
        read_ig(kv, &format!("{prefix}.error"), &mut o.error)?;
        read_ig(kv, &format!("{prefix}.cluster"), &mut o.cluster)?;
        read_ig(
            kv,
            &format!("{prefix}.cluster_period"),
            &mut o.cluster_period,
        )?;
    }
    for (name, s) in [("z", &mut p.z), ("w", &mut p.w)] {
        let prefix = format!("prior.{name}");
        read_coefficients(kv, &prefix, &mut s.coefficients)?;
        read_ig(kv, &format!("{prefix}.cluster"), &mut s.cluster)?;
        read_ig(
            kv,
            &format!("{prefix}.cluster_period"),
            &mut s.cluster_period,
        )?;
    }
    Ok(())
}

/// Model configuration from a file; every key is optional and defaults to Model 1.
pub fn model_config_from(mut kv: KeyValues) -> Result<ModelConfig> {
    let mut c = ModelConfig::for_variant(ModelVariant::M1);
    apply_model_keys(&mut kv, &mut c)?;
    kv.finish()?;
    Ok(c)
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn coefficient_lines(prefix: &str, c: &CoefficientPrior, out: &mut Vec<(String, String)>) {
    match c {
        CoefficientPrior::Isotropic { mean, variance } => {
            out.push((format!("{prefix}.coef_mean"), format!("{mean:?}")));
            out.push((format!("{prefix}.coef_variance"), format!("{variance:?}")));
        }
        CoefficientPrior::Full { mean, covariance } => {
            out.push((
                format!("{prefix}.coef_mean_vector"),
                fmt_list(mean.as_slice()),
            ));
            out.push((
                format!("{prefix}.coef_covariance"),
                fmt_list(covariance.transpose().as_slice()),
            ));
        }
    }
}

/// Every key of a resolved configuration, in a fixed order. Parsing the
/// rendered text yields the same configuration.
pub fn model_config_lines(c: &ModelConfig) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = vec![
        ("ps_cluster_re".into(), c.ps_cluster_re.to_string()),
        (
            "ps_clusterperiod_re".into(),
            c.ps_clusterperiod_re.to_string(),
        ),
        (
            "outcome_clusterperiod_re".into(),
            c.outcome_clusterperiod_re.to_string(),
        ),
        ("iterations".into(), c.iterations.to_string()),
        ("burn_in".into(), c.burn_in.to_string()),
        ("thinning".into(), c.thinning.to_string()),
        ("n_chains".into(), c.n_chains.to_string()),
        ("seed".into(), c.seed.to_string()),
        ("keep_coefficients".into(), c.keep_coefficients.to_string()),
    ];
    let p = &c.priors;
    let ig = |prefix: String, g: &IgPrior, out: &mut Vec<(String, String)>| {
        out.push((format!("{prefix}_shape"), format!("{:?}", g.shape)));
        out.push((format!("{prefix}_rate"), format!("{:?}", g.rate)));
    };
    for (name, o) in [("always", &p.always), ("protected", &p.protected)] {
        let prefix = format!("prior.{name}");
        coefficient_lines(&prefix, &o.coefficients, &mut out);
        ig(format!("{prefix}.error"), &o.error, &mut out);
        ig(format!("{prefix}.cluster"), &o.cluster, &mut out);
        ig(
            format!("{prefix}.cluster_period"),
            &o.cluster_period,
            &mut out,
        );
    }
    for (name, s) in [("z", &p.z), ("w", &p.w)] {
        let prefix = format!("prior.{name}");
        coefficient_lines(&prefix, &s.coefficients, &mut out);
        ig(format!("{prefix}.cluster"), &s.cluster, &mut out);
        ig(
            format!("{prefix}.cluster_period"),
            &s.cluster_period,
            &mut out,
        );
    }
    out
}

pub fn render(lines: &[(String, String)]) -> String {
    lines.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

fn parse_covariates(kv: &KeyValues, line: u64, v: &str) -> Result<Vec<CovariateSpec>> {
    v.split(',')
        .map(|item| {
            let parts: Vec<&str> = item.trim().split(':').collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| kv.error(line, format!("covariates: '{item}': {e}")))
            };
            match parts.as_slice() {
                ["normal", m, v] => Ok(CovariateSpec::Normal {
                    mean: num(m)?,
                    variance: num(v)?,
                }),
                ["bernoulli", p] => Ok(CovariateSpec::Bernoulli { p: num(p)? }),
                _ => Err(kv.error(
                    line,
                    format!("covariates: '{item}' is not normal:MEAN:VAR or bernoulli:P"),
                )),
            }
        })
        .collect()
}

/// Scenario from a file: `preset` (default `scenario2`) then field overrides.
pub fn scenario_from(mut kv: KeyValues) -> Result<Scenario> {
    let preset_line = kv.entries.get("preset").map(|(l, _)| *l);
    let preset = kv
        .take("preset")
        .map(|(_, v)| v)
        .unwrap_or_else(|| "scenario2".into());
    let mut s = Scenario::preset(&preset).ok_or_else(|| {
        kv.error(
            preset_line.unwrap_or(0),
            format!("unknown preset '{preset}'"),
        )
    })?;
    if let Some((_, v)) = kv.take("name") {
        s.name = v;
    }
    set(&mut s.n_clusters, kv.take_parsed("n_clusters")?);
    set(&mut s.cluster_period_size.0, kv.take_parsed("size_min")?);
    set(&mut s.cluster_period_size.1, kv.take_parsed("size_max")?);
    if let Some((line, v)) = kv.take("covariates") {
        s.covariates = parse_covariates(&kv, line, &v)?;
        s.covariate_names = (1..=s.covariates.len()).map(|q| format!("x{q}")).collect();
    }
    if let Some((_, v)) = kv.take("covariate_names") {
        s.covariate_names = v.split(',').map(|x| x.trim().to_string()).collect();
    }
    set(&mut s.z_coefficients, kv.take_list("z_coefficients")?);
    set(&mut s.w_coefficients, kv.take_list("w_coefficients")?);
    set(&mut s.always_treated, kv.take_list("always_treated")?);
    set(&mut s.always_control, kv.take_list("always_control")?);
    set(&mut s.protected_treated, kv.take_list("protected_treated")?);
    set(
        &mut s.error_variance_always,
        kv.take_parsed("error_variance_always")?,
    );
    set(
        &mut s.error_variance_protected,
        kv.take_parsed("error_variance_protected")?,
    );
    set(&mut s.outcome_bpc, kv.take_parsed("outcome_bpc")?);
    set(&mut s.outcome_wpc, kv.take_parsed("outcome_wpc")?);
    set(&mut s.strata_icc, kv.take_parsed("strata_icc")?);
    let sb = kv.take_parsed::<f64>("strata_bpc")?;
    let sw = kv.take_parsed::<f64>("strata_wpc")?;
    match (sb, sw) {
        (Some(b), Some(w)) => s.strata_cp = Some((b, w)),
        (None, None) => {}
        _ => {
            return Err(CliError::Validation(
                "strata_bpc and strata_wpc go together".into(),
            ))
        }
    }
    set(&mut s.seed, kv.take_parsed("seed")?);
    kv.finish()?;
    s.validate()?;
    Ok(s)
}

/// A scenario file path, or the name of a preset.
pub fn load_scenario(spec: &str) -> Result<Scenario> {
    let path = Path::new(spec);
    if path.exists() {
        scenario_from(KeyValues::read(path)?)
    } else {
        Scenario::preset(spec).ok_or_else(|| {
            CliError::Validation(format!("'{spec}' is neither a scenario file nor a preset"))
        })
    }
}

/// Every field of a scenario as `key = value` lines.
pub fn scenario_lines(s: &Scenario) -> Vec<(String, String)> {
    let cov = s
        .covariates
        .iter()
        .map(|c| match c {
            CovariateSpec::Normal { mean, variance } => format!("normal:{mean:?}:{variance:?}"),
            CovariateSpec::Bernoulli { p } => format!("bernoulli:{p:?}"),
        })
        .collect::<Vec<_>>()
        .join(",");
    let mut out = vec![
        ("name".into(), s.name.clone()),
        ("n_clusters".into(), s.n_clusters.to_string()),
        ("size_min".into(), s.cluster_period_size.0.to_string()),
        ("size_max".into(), s.cluster_period_size.1.to_string()),
        ("covariates".into(), cov),
        ("covariate_names".into(), s.covariate_names.join(",")),
        ("z_coefficients".into(), fmt_list(&s.z_coefficients)),
        ("w_coefficients".into(), fmt_list(&s.w_coefficients)),
        ("always_treated".into(), fmt_list(&s.always_treated)),
        ("always_control".into(), fmt_list(&s.always_control)),
        ("protected_treated".into(), fmt_list(&s.protected_treated)),
        (
            "error_variance_always".into(),
            format!("{:?}", s.error_variance_always),
        ),
        (
            "error_variance_protected".into(),
            format!("{:?}", s.error_variance_protected),
        ),
        ("outcome_bpc".into(), format!("{:?}", s.outcome_bpc)),
        ("outcome_wpc".into(), format!("{:?}", s.outcome_wpc)),
        ("strata_icc".into(), format!("{:?}", s.strata_icc)),
    ];
    if let Some((b, w)) = s.strata_cp {
        out.push(("strata_bpc".into(), format!("{b:?}")));
        out.push(("strata_wpc".into(), format!("{w:?}")));
    }
    out.push(("seed".into(), s.seed.to_string()));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let kv = KeyValues::parse("iterations = 10\nbogus = 1\n", "cfg").unwrap();
        let err = model_config_from(kv).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        assert!(KeyValues::parse("a = 1\na = 2", "cfg").is_err());
        assert!(KeyValues::parse("no equals sign", "cfg").is_err());
    }

    #[test]
    fn model_keys_round_trip() {
        let text =
            "model = A\niterations = 100\nburn_in = 10\nthinning = 3\nn_chains = 2\nseed = 9\n\
                    prior.z.coef_variance = 4\nprior.always.error_shape = 2\n\
                    prior.protected.coef_mean_vector = 0,0,0\n\
                    prior.protected.coef_covariance = 2,0,0,0,2,0,0,0,2\n";
        let c = model_config_from(KeyValues::parse(text, "cfg").unwrap()).unwrap();
        assert_eq!(c.variant(), Some(ModelVariant::A));
        assert_eq!(
            (c.iterations, c.burn_in, c.thinning, c.n_chains, c.seed),
            (100, 10, 3, 2, 9)
        );
        assert_eq!(c.priors.always.error.shape, 2.0);
        let again =
            model_config_from(KeyValues::parse(&render(&model_config_lines(&c)), "r").unwrap())
                .unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn scenario_overrides_and_round_trip() {
        let text = "preset = scenario3\nname = mine\nn_clusters = 8\nstrata_bpc = 0.02\nstrata_wpc = 0.03\n";
        let s = scenario_from(KeyValues::parse(text, "sc").unwrap()).unwrap();
        assert_eq!(s.n_clusters, 8);
        assert_eq!(s.outcome_wpc, 0.1);
        assert_eq!(s.strata_cp, Some((0.02, 0.03)));
        let again =
            scenario_from(KeyValues::parse(&render(&scenario_lines(&s)), "r").unwrap()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn bad_covariate_spec_names_line() {
        let err = scenario_from(KeyValues::parse("\ncovariates = normal:1\n", "sc").unwrap())
            .unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
    }
}
