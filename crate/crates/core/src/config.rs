//! Run configuration: plain-text `key=value` lines with dotted sections.
//! Every key is also accepted as a long command-line flag of the same name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::lapse::{EllipticConfig, InitialGuess};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Evolve,
    Picard,
    Mms,
    TraceCheck,
    CompatCheck,
    ConvergenceSuite,
}

impl Mode {
    pub const ALL: [Mode; 6] =
        [Mode::Evolve, Mode::Picard, Mode::Mms, Mode::TraceCheck, Mode::CompatCheck, Mode::ConvergenceSuite];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Evolve => "evolve",
            Mode::Picard => "picard",
            Mode::Mms => "mms",
            Mode::TraceCheck => "trace-check",
            Mode::CompatCheck => "compat-check",
            Mode::ConvergenceSuite => "convergence-suite",
        }
    }

    /// Modes that integrate in time and so need `evolve.t_final`.
    pub fn evolves(self) -> bool {
        matches!(self, Mode::Evolve | Mode::Picard | Mode::Mms | Mode::ConvergenceSuite)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolveConfig {
    pub mode: Mode,
    pub t_final: f64,
    pub cfl: f64,
    pub diagnostics_cadence: usize,
    /// Steps between snapshots; 0 writes none.
    pub snapshot_cadence: usize,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InitialData {
    Flat,
    Perturbed { epsilon: f64, profile: u32 },
    /// Seeded closed-form state with boundary data read off it.
    Analytic,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryChoice {
    /// The family matching the initial data.
    Auto,
    Constant,
    DiagExp { lambda: f64 },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub grid: GridSpec,
    pub evolve: EvolveConfig,
    pub elliptic: EllipticConfig,
    pub initial_data: InitialData,
    pub boundary: BoundaryChoice,
    /// Order `r` of the energies.
    pub energy_order: usize,
    /// Time samples of the boundary-data norm.
    pub cbd_samples: usize,
    /// Grid doublings in the convergence modes, counting the base grid.
    pub levels: usize,
    pub compat_tol: f64,
    pub output_dir: PathBuf,
    pub seed: u64,
}

/// Every accepted key with its default (`None`: required or conditional).
pub const KEYS: [(&str, Option<&str>); 30] = [
    ("grid.n1", Some("16")),
    ("grid.n2", Some("16")),
    ("grid.n3", Some("16")),
    ("grid.x3_min", Some("-1")),
    ("grid.ghost", Some("2")),
    ("grid.period1", Some("6.283185307179586")),
    ("grid.period2", Some("6.283185307179586")),
    ("evolve.mode", Some("evolve")),
    ("evolve.t_final", None),
    ("evolve.cfl", Some("0.25")),
    ("evolve.diagnostics_cadence", Some("1")),
    ("evolve.snapshot_cadence", Some("0")),
    ("evolve.picard_tol", Some("1e-10")),
    ("evolve.picard_max_iter", Some("30")),
    ("elliptic.rel_tol", Some("1e-10")),
    ("elliptic.max_iter", Some("500")),
    ("elliptic.initial_guess", Some("previous")),
    ("initial_data.kind", None),
    ("initial_data.epsilon", None),
    ("initial_data.profile", Some("0")),
    ("initial_data.path", None),
    ("boundary.family", Some("auto")),
    ("boundary.lambda", None),
    ("boundary.path", None),
    ("diagnostics.energy_order", Some("0")),
    ("diagnostics.cbd_samples", Some("8")),
    ("convergence.levels", Some("3")),
    ("compat.tol", Some("1e-4")),
    ("output_dir", Some("out")),
    ("seed", Some("0")),
];

fn all_keys() -> impl Iterator<Item = (&'static str, Option<&'static str>)> {
    KEYS.iter().copied()
}

/// Raw `key → value` pairs, later sources overriding earlier ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    pub values: BTreeMap<String, String>,
}

impl RawConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::config(line, format!("line {}: expected key=value", n + 1)))?;
            raw.set(k.trim(), v.trim())?;
        }
        Ok(raw)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !all_keys().any(|(k, _)| k == key) {
            return Err(Error::config(key, "unknown key"));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn get(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .or_else(|| all_keys().find(|(k, _)| *k == key).and_then(|(_, d)| d))
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::config(key, "missing required key"))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse().map_err(|_| Error::config(key, format!("expected {what}, got {v:?}")))
    }

    fn float(&self, key: &str) -> Result<f64> {
        let x: f64 = self.parsed(key, "a number")?;
        if !x.is_finite() {
            return Err(Error::config(key, "must be finite"));
        }
        Ok(x)
    }

    fn uint(&self, key: &str) -> Result<usize> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mode_s = self.require("evolve.mode")?;
        let mode = Mode::ALL
            .into_iter()
            .find(|m| m.name() == mode_s)
            .ok_or_else(|| Error::config("evolve.mode", format!("unknown mode {mode_s:?}")))?;
        let grid = GridSpec {
            n1: self.uint("grid.n1")?,
            n2: self.uint("grid.n2")?,
            n3: self.uint("grid.n3")?,
            x3_min: self.float("grid.x3_min")?,
            ghost: self.uint("grid.ghost")?,
            period1: self.float("grid.period1")?,
            period2: self.float("grid.period2")?,
        };
        let t_final = if mode.evolves() || self.values.contains_key("evolve.t_final") {
            let t = self.float("evolve.t_final")?;
            if t <= 0.0 {
                return Err(Error::config("evolve.t_final", "must be positive"));
            }
            t
        } else {
            0.0
        };
        let cfl = self.float("evolve.cfl")?;
        if !(cfl > 0.0 && cfl <= 1.0) {
            return Err(Error::config("evolve.cfl", "must lie in (0, 1]"));
        }
        let evolve = EvolveConfig {
            mode,
            t_final,
            cfl,
            diagnostics_cadence: self.uint("evolve.diagnostics_cadence")?.max(1),
            snapshot_cadence: self.uint("evolve.snapshot_cadence")?,
            picard_tol: self.float("evolve.picard_tol")?,
            picard_max_iter: self.uint("evolve.picard_max_iter")?,
        };
        if evolve.picard_tol <= 0.0 {
            return Err(Error::config("evolve.picard_tol", "must be positive"));
        }
        let guess = self.require("elliptic.initial_guess")?;
        let elliptic = EllipticConfig {
            rel_tol: self.float("elliptic.rel_tol")?,
            max_iter: self.uint("elliptic.max_iter")?,
            initial_guess: match guess {
                "previous" => InitialGuess::Previous,
                "unity" => InitialGuess::Unity,
                _ => return Err(Error::config("elliptic.initial_guess", "expected previous or unity")),
            },
        };
        if elliptic.rel_tol <= 0.0 {
            return Err(Error::config("elliptic.rel_tol", "must be positive"));
        }
        if elliptic.max_iter == 0 {
            return Err(Error::config("elliptic.max_iter", "must be at least 1"));
        }
        let initial_data = match self.require("initial_data.kind")? {
            "flat" => InitialData::Flat,
            "perturbed" => {
                let epsilon = self.float("initial_data.epsilon")?;
                if epsilon < 0.0 {
                    return Err(Error::config("initial_data.epsilon", "must be non-negative"));
                }
                InitialData::Perturbed { epsilon, profile: self.parsed("initial_data.profile", "a profile id")? }
            }
            "analytic" => InitialData::Analytic,
            "file" => InitialData::File(self.require("initial_data.path")?.into()),
            k => return Err(Error::config("initial_data.kind", format!("unknown kind {k:?}"))),
        };
        let boundary = match self.require("boundary.family")? {
            "auto" => BoundaryChoice::Auto,
            "constant" => BoundaryChoice::Constant,
            "diag-exponential" => BoundaryChoice::DiagExp { lambda: self.float("boundary.lambda")? },
            "file" => BoundaryChoice::File(self.require("boundary.path")?.into()),
            f => return Err(Error::config("boundary.family", format!("unknown family {f:?}"))),
        };
        let energy_order = self.uint("diagnostics.energy_order")?;
        if energy_order > 1 {
            return Err(Error::config("diagnostics.energy_order", "supported orders are 0 and 1"));
        }
        let levels = self.uint("convergence.levels")?;
        if levels < 2 {
            return Err(Error::config("convergence.levels", "need at least two grids"));
        }
        Ok(RunConfig {
            grid,
            evolve,
            elliptic,
            initial_data,
            boundary,
            energy_order,
            cbd_samples: self.uint("diagnostics.cbd_samples")?,
            levels,
            compat_tol: self.float("compat.tol")?,
            output_dir: self.require("output_dir")?.into(),
            seed: self.parsed("seed", "a non-negative integer")?,
        })
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    RawConfig::parse(text)?.resolve()
}

impl RunConfig {
    /// Every resolved key, one `key=value` line each, in [`KEYS`] order.
    /// Parsing the output yields the same configuration.
    pub fn serialize(&self) -> String {
        let mut kv: Vec<(&str, String)> = vec![
            ("grid.n1", self.grid.n1.to_string()),
            ("grid.n2", self.grid.n2.to_string()),
            ("grid.n3", self.grid.n3.to_string()),
            ("grid.x3_min", self.grid.x3_min.to_string()),
            ("grid.ghost", self.grid.ghost.to_string()),
            ("grid.period1", self.grid.period1.to_string()),
            ("grid.period2", self.grid.period2.to_string()),
            ("evolve.mode", self.evolve.mode.name().to_string()),
        ];
        if self.evolve.t_final > 0.0 {
            kv.push(("evolve.t_final", self.evolve.t_final.to_string()));
        }
        kv.extend([
            ("evolve.cfl", self.evolve.cfl.to_string()),
            ("evolve.diagnostics_cadence", self.evolve.diagnostics_cadence.to_string()),
            ("evolve.snapshot_cadence", self.evolve.snapshot_cadence.to_string()),
            ("evolve.picard_tol", self.evolve.picard_tol.to_string()),
            ("evolve.picard_max_iter", self.evolve.picard_max_iter.to_string()),
            ("elliptic.rel_tol", self.elliptic.rel_tol.to_string()),
            ("elliptic.max_iter", self.elliptic.max_iter.to_string()),
            (
                "elliptic.initial_guess",
                match self.elliptic.initial_guess {
                    InitialGuess::Previous => "previous",
                    InitialGuess::Unity => "unity",
                }
                .to_string(),
            ),
        ]);
        match &self.initial_data {
            InitialData::Flat => kv.push(("initial_data.kind", "flat".into())),
            InitialData::Analytic => kv.push(("initial_data.kind", "analytic".into())),
            InitialData::Perturbed { epsilon, profile } => kv.extend([
                ("initial_data.kind", "perturbed".into()),
                ("initial_data.epsilon", epsilon.to_string()),
                ("initial_data.profile", profile.to_string()),
            ]),
            InitialData::File(p) => {
                kv.extend([("initial_data.kind", "file".into()), ("initial_data.path", p.display().to_string())])
            }
        }
        match &self.boundary {
            BoundaryChoice::Auto => kv.push(("boundary.family", "auto".into())),
            BoundaryChoice::Constant => kv.push(("boundary.family", "constant".into())),
            BoundaryChoice::DiagExp { lambda } => {
                kv.extend([("boundary.family", "diag-exponential".into()), ("boundary.lambda", lambda.to_string())])
            }
            BoundaryChoice::File(p) => {
                kv.extend([("boundary.family", "file".into()), ("boundary.path", p.display().to_string())])
            }
        }
        kv.extend([
            ("diagnostics.energy_order", self.energy_order.to_string()),
            ("diagnostics.cbd_samples", self.cbd_samples.to_string()),
            ("convergence.levels", self.levels.to_string()),
            ("compat.tol", self.compat_tol.to_string()),
            ("output_dir", self.output_dir.display().to_string()),
            ("seed", self.seed.to_string()),
        ]);
        let mut s = String::new();
        for (k, v) in kv {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Grid of convergence level `j`: tangential counts times `2ʲ`, normal
    /// intervals times `2ʲ`.
    pub fn level_grid(&self, j: usize) -> GridSpec {
        let m = 1usize << j;
        GridSpec { n1: self.grid.n1 * m, n2: self.grid.n2 * m, n3: (self.grid.n3 - 1) * m + 1, ..self.grid }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn minimal_flat_config_fills_defaults() {
        let c = parse_config("initial_data.kind=flat\nevolve.t_final=1\n").unwrap();
        assert_eq!(c.evolve.cfl, 0.25);
        assert_eq!(c.elliptic.rel_tol, 1e-10);
        assert_eq!(c.energy_order, 0);
        assert_eq!(c.initial_data, InitialData::Flat);
        assert_eq!(c.evolve.mode, Mode::Evolve);
        assert_eq!(c.grid, GridSpec { x3_min: -1.0, ..GridSpec::default() });
    }

    fn key_of(e: Error) -> String {
        match e {
            Error::Config { key, .. } => key,
            other => panic!("not a config error: {other}"),
        }
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(key_of(parse_config("initial_data.kind=flat\nevolve.t_final=1\ngrid.n1=3x\n").unwrap_err()), "grid.n1");
        assert_eq!(key_of(parse_config("initial_data.kind=flat\nevolve.t_final=1\ngrid.nn=3\n").unwrap_err()), "grid.nn");
        assert_eq!(key_of(parse_config("evolve.t_final=1\n").unwrap_err()), "initial_data.kind");
        assert_eq!(key_of(parse_config("initial_data.kind=flat\n").unwrap_err()), "evolve.t_final");
        assert_eq!(
            key_of(parse_config("initial_data.kind=perturbed\nevolve.t_final=1\n").unwrap_err()),
            "initial_data.epsilon"
        );
        assert_eq!(
            key_of(parse_config("initial_data.kind=flat\nevolve.t_final=1\nevolve.cfl=1.5\n").unwrap_err()),
            "evolve.cfl"
        );
        assert_eq!(
            key_of(parse_config("initial_data.kind=flat\nboundary.family=diag-exponential\nevolve.t_final=1\n").unwrap_err()),
            "boundary.lambda"
        );
        // Not time dependent: no end time needed.
        assert!(parse_config("initial_data.kind=flat\nevolve.mode=compat-check\n").is_ok());
    }

    #[test]
    fn comments_and_whitespace() {
        let c = parse_config("# run\n\n initial_data.kind = flat \nevolve.t_final=0.5\n").unwrap();
        assert_eq!(c.evolve.t_final, 0.5);
    }

    #[test]
    fn level_grids_refine_node_centred_normal() {
        let c = parse_config("initial_data.kind=flat\nevolve.t_final=1\ngrid.n3=9\n").unwrap();
        let g = c.level_grid(2);
        assert_eq!((g.n1, g.n2, g.n3), (64, 64, 33));
    }

    proptest! {
        #[test]
        fn lambda_family_round_trips(
            lambda in -10.0f64..10.0,
            eps in 0.0f64..1.0,
            n in 4usize..64,
            cfl in 0.01f64..1.0,
            tol in 1e-14f64..1e-3,
        ) {
            let text = format!(
                "initial_data.kind=perturbed\ninitial_data.epsilon={eps}\nboundary.family=diag-exponential\n\
                 boundary.lambda={lambda}\ngrid.n2={n}\nevolve.cfl={cfl}\nelliptic.rel_tol={tol}\nevolve.t_final=0.3\n"
            );
            let c = parse_config(&text).unwrap();
            prop_assert_eq!(&c.boundary, &BoundaryChoice::DiagExp { lambda });
            let again = parse_config(&c.serialize()).unwrap();
            prop_assert_eq!(&again, &c);
            prop_assert_eq!(again.serialize(), c.serialize());
        }
    }
}
