//! Experiment configuration: structured key-value text with CLI-style
//! overrides.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::estimators::{RecoveryMethod, SolverSettings};

use super::HarnessError;

/// Ground-truth topology source for an experiment.
#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// A case file on disk; one scenario point.
    Case { path: PathBuf },
    /// Watts-Strogatz graphs, one scenario point per entry of `m_list`.
    WattsStrogatz {
        m_list: Vec<usize>,
        degree: usize,
        rewire_prob: f64,
        frobenius_norm: f64,
    },
}

/// Noise specification: exactly one of SNR sweep or fixed variance.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSpec {
    SnrDbList(Vec<f64>),
    Sigma2(f64),
}

/// Sparsity fraction: `Auto` resolves to `min(4/M, 0.9)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSpec {
    Auto,
    Fixed(f64),
}

impl AlphaSpec {
    pub fn resolve(&self, bus_count: usize) -> f64 {
        match self {
            AlphaSpec::Auto => (4.0 / bus_count as f64).min(0.9),
            AlphaSpec::Fixed(a) => *a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub noise: NoiseSpec,
    pub n_list: Vec<usize>,
    pub mc_trials: usize,
    pub methods: Vec<RecoveryMethod>,
    pub alpha: AlphaSpec,
    pub prior_c: f64,
    pub solver: SolverSettings,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker budget for trial parallelism; 0 uses all cores.
    pub workers: usize,
    pub center: bool,
    /// Record wall-clock runtimes in the results; off by default so results
    /// files stay byte-reproducible.
    pub measure_runtime: bool,
    /// A grid point whose failure fraction exceeds this is flagged.
    pub max_failure_rate: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Case {
                path: PathBuf::from("cases/ieee14.case"),
            },
            noise: NoiseSpec::SnrDbList(vec![5.0, 10.0, 15.0, 20.0, 25.0, 30.0]),
            n_list: vec![200, 1500],
            mc_trials: 50,
            methods: vec![
                RecoveryMethod::TwoPhase,
                RecoveryMethod::AugmentedLagrangian,
            ],
            alpha: AlphaSpec::Auto,
            prior_c: 1.0,
            solver: SolverSettings::default(),
            seed: 42,
            output_dir: PathBuf::from("runs/experiment"),
            workers: 0,
            center: true,
            measure_runtime: false,
            max_failure_rate: 0.05,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.mc_trials == 0 {
            return Err(HarnessError::Config("mc_trials must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods must not be empty".into()));
        }
        if self.n_list.is_empty() {
            return Err(HarnessError::Config("n list must not be empty".into()));
        }
        if let AlphaSpec::Fixed(a) = self.alpha
            && !(a > 0.0 && a < 1.0)
        {
            return Err(HarnessError::Config(format!(
                "alpha must lie in (0,1), got {a}"
            )));
        }
        if self.prior_c <= 0.0 {
            return Err(HarnessError::Config("prior_c must be positive".into()));
        }
        if let NoiseSpec::Sigma2(s) = self.noise
            && s < 0.0
        {
            return Err(HarnessError::Config("sigma2 must be nonnegative".into()));
        }
        if let Scenario::WattsStrogatz {
            m_list,
            degree,
            rewire_prob,
            frobenius_norm,
        } = &self.scenario
        {
            if m_list.is_empty() {
                return Err(HarnessError::Config("ws_m must not be empty".into()));
            }
            for &m in m_list {
                if *degree == 0 || degree % 2 != 0 || *degree >= m {
                    return Err(HarnessError::Config(format!(
                        "ws_degree {degree} must be even, positive and below m = {m}"
                    )));
                }
                for &n in &self.n_list {
                    if n + 1 < m {
                        return Err(HarnessError::Config(format!(
                            "n = {n} below identifiability floor m - 1 = {}",
                            m - 1
                        )));
                    }
                }
            }
            if !(0.0..=1.0).contains(rewire_prob) {
                return Err(HarnessError::Config(
                    "ws_rewire_prob must lie in [0,1]".into(),
                ));
            }
            if *frobenius_norm <= 0.0 {
                return Err(HarnessError::Config("ws_frobenius must be positive".into()));
            }
        }
        Ok(())
    }

    /// Parse the key-value config format; see `parse_pairs` for the schema.
    pub fn from_text(text: &str) -> Result<Self, HarnessError> {
        let mut pairs = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!("line {}: expected 'key = value'", idx + 1))
            })?;
            pairs.insert(key.trim().to_string(), value.trim().to_string());
        }
        Self::from_pairs(&pairs)
    }

    /// Build a config from `key = value` pairs, starting from defaults.
    ///
    /// Keys: `scenario` (`ieee14`/`case`/`watts_strogatz`), `case_path`,
    /// `ws_m` (comma list), `ws_degree`, `ws_rewire_prob`, `ws_frobenius`,
    /// `snr_db` (comma list) xor `sigma2`, `n` (comma list), `mc_trials`,
    /// `methods` (comma list), `alpha` (`auto` or number), `prior_c`, `seed`,
    /// `output_dir`, `workers`, `center`, `measure_runtime`,
    /// `max_failure_rate`, and solver keys `eta`, `gamma`, `max_iters`,
    /// `epsilon`, `dykstra_max_iters`, `dykstra_tol`.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        let bad = |key: &str, value: &str| {
            HarnessError::Config(format!("invalid value '{value}' for key '{key}'"))
        };

        let mut scenario_kind: Option<String> = None;
        let mut case_path: Option<PathBuf> = None;
        let mut ws_m: Option<Vec<usize>> = None;
        let mut ws_degree = 4usize;
        let mut ws_rewire = 0.2f64;
        let mut ws_frobenius = 5.0f64;
        let mut snr_db: Option<Vec<f64>> = None;
        let mut sigma2: Option<f64> = None;

        for (key, value) in pairs {
            match key.as_str() {
                "scenario" => scenario_kind = Some(value.clone()),
                "case_path" => case_path = Some(PathBuf::from(value)),
                "ws_m" => ws_m = Some(parse_list(value).map_err(|_| bad(key, value))?),
                "ws_degree" => ws_degree = value.parse().map_err(|_| bad(key, value))?,
                "ws_rewire_prob" => ws_rewire = value.parse().map_err(|_| bad(key, value))?,
                "ws_frobenius" => ws_frobenius = value.parse().map_err(|_| bad(key, value))?,
                "snr_db" => snr_db = Some(parse_list(value).map_err(|_| bad(key, value))?),
                "sigma2" => sigma2 = Some(value.parse().map_err(|_| bad(key, value))?),
                "n" => cfg.n_list = parse_list(value).map_err(|_| bad(key, value))?,
                "mc_trials" => cfg.mc_trials = value.parse().map_err(|_| bad(key, value))?,
                "methods" => {
                    cfg.methods = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<_, _>>()
                        .map_err(HarnessError::Config)?;
                }
                "alpha" => {
                    cfg.alpha = if value == "auto" {
                        AlphaSpec::Auto
                    } else {
                        AlphaSpec::Fixed(value.parse().map_err(|_| bad(key, value))?)
                    };
                }
                "prior_c" => cfg.prior_c = value.parse().map_err(|_| bad(key, value))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "workers" => cfg.workers = value.parse().map_err(|_| bad(key, value))?,
                "center" => cfg.center = parse_bool(value).map_err(|_| bad(key, value))?,
                "measure_runtime" => {
                    cfg.measure_runtime = parse_bool(value).map_err(|_| bad(key, value))?
                }
                "max_failure_rate" => {
                    cfg.max_failure_rate = value.parse().map_err(|_| bad(key, value))?
                }
                "eta" => cfg.solver.eta = value.parse().map_err(|_| bad(key, value))?,
                "gamma" => cfg.solver.gamma = value.parse().map_err(|_| bad(key, value))?,
                "max_iters" => cfg.solver.max_iters = value.parse().map_err(|_| bad(key, value))?,
                "epsilon" => cfg.solver.epsilon = value.parse().map_err(|_| bad(key, value))?,
                "dykstra_max_iters" => {
                    cfg.solver.dykstra_max_iters = value.parse().map_err(|_| bad(key, value))?
                }
                "dykstra_tol" => {
                    cfg.solver.dykstra_tol = value.parse().map_err(|_| bad(key, value))?
                }
                other => {
                    return Err(HarnessError::Config(format!("unknown key '{other}'")));
                }
            }
        }

        match scenario_kind.as_deref() {
            None | Some("ieee14") | Some("case") => {
                if let Some(path) = case_path {
                    cfg.scenario = Scenario::Case { path };
                }
            }
            Some("watts_strogatz") => {
                cfg.scenario = Scenario::WattsStrogatz {
                    m_list: ws_m.ok_or_else(|| {
                        HarnessError::Config("watts_strogatz scenario needs ws_m".into())
                    })?,
                    degree: ws_degree,
                    rewire_prob: ws_rewire,
                    frobenius_norm: ws_frobenius,
                };
            }
            Some(other) => {
                return Err(HarnessError::Config(format!("unknown scenario '{other}'")));
            }
        }

        match (snr_db, sigma2) {
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config(
                    "specify exactly one of snr_db and sigma2".into(),
                ));
            }
            (Some(list), None) => cfg.noise = NoiseSpec::SnrDbList(list),
            (None, Some(s)) => cfg.noise = NoiseSpec::Sigma2(s),
            (None, None) => {}
        }

        cfg.validate()?;
        Ok(cfg)
    }

    /// Serialize back to the key-value format (used for the run manifest).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        match &self.scenario {
            Scenario::Case { path } => {
                out.push_str("scenario = case\n");
                out.push_str(&format!("case_path = {}\n", path.display()));
            }
            Scenario::WattsStrogatz {
                m_list,
                degree,
                rewire_prob,
                frobenius_norm,
            } => {
                out.push_str("scenario = watts_strogatz\n");
                out.push_str(&format!("ws_m = {}\n", join_list(m_list)));
                out.push_str(&format!("ws_degree = {degree}\n"));
                out.push_str(&format!("ws_rewire_prob = {rewire_prob}\n"));
                out.push_str(&format!("ws_frobenius = {frobenius_norm}\n"));
            }
        }
        match &self.noise {
            NoiseSpec::SnrDbList(list) => out.push_str(&format!("snr_db = {}\n", join_list(list))),
            NoiseSpec::Sigma2(s) => out.push_str(&format!("sigma2 = {s}\n")),
        }
        out.push_str(&format!("n = {}\n", join_list(&self.n_list)));
        out.push_str(&format!("mc_trials = {}\n", self.mc_trials));
        let methods: Vec<String> = self.methods.iter().map(|m| m.to_string()).collect();
        out.push_str(&format!("methods = {}\n", methods.join(",")));
        match self.alpha {
            AlphaSpec::Auto => out.push_str("alpha = auto\n"),
            AlphaSpec::Fixed(a) => out.push_str(&format!("alpha = {a}\n")),
        }
        out.push_str(&format!("prior_c = {}\n", self.prior_c));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("output_dir = {}\n", self.output_dir.display()));
        out.push_str(&format!("workers = {}\n", self.workers));
        out.push_str(&format!("center = {}\n", self.center));
        out.push_str(&format!("measure_runtime = {}\n", self.measure_runtime));
        out.push_str(&format!("max_failure_rate = {}\n", self.max_failure_rate));
        out.push_str(&format!("eta = {}\n", self.solver.eta));
        out.push_str(&format!("gamma = {}\n", self.solver.gamma));
        out.push_str(&format!("max_iters = {}\n", self.solver.max_iters));
        out.push_str(&format!("epsilon = {}\n", self.solver.epsilon));
        out.push_str(&format!(
            "dykstra_max_iters = {}\n",
            self.solver.dykstra_max_iters
        ));
        out.push_str(&format!("dykstra_tol = {}\n", self.solver.dykstra_tol));
        out
    }
}

fn parse_bool(s: &str) -> Result<bool, ()> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(()),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, ()> {
    s.split(',')
        .map(|item| item.trim().parse().map_err(|_| ()))
        .collect()
}

fn join_list<T: std::fmt::Display>(list: &[T]) -> String {
    list.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}
