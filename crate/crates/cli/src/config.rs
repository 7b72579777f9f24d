//! Run configuration file. Relative paths resolve against the file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use mgtrade::auction::AssaConfig;
use mgtrade::io;
use mgtrade::model::{IntervalGrid, MicrogridSpec};
use mgtrade::sim::experiments::ExperimentOptions;
use mgtrade::sim::{MarketMode, SimConfig, SimInputs};
use mgtrade::strategy::StrategyKind;
use mgtrade::{synth, Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub mc_samples: usize,
    pub grid: GridSection,
    pub fleet: FleetSection,
    pub history: HistorySection,
    /// Tariff blocks file; the bundled stepped schedule when absent.
    pub tariff: Option<PathBuf>,
    pub market: MarketSection,
    pub assa: AssaConfig,
    /// One entry for everyone, or one per microgrid.
    pub strategies: Vec<StrategyKind>,
    pub ddoo: DdooSection,
    pub flags: Flags,
    pub experiment: ExperimentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            threads: None,
            mc_samples: 100_000,
            grid: GridSection::default(),
            fleet: FleetSection::default(),
            history: HistorySection::default(),
            tariff: None,
            market: MarketSection::default(),
            assa: AssaConfig::default(),
            strategies: vec![StrategyKind::ddoo()],
            ddoo: DdooSection::default(),
            flags: Flags::default(),
            experiment: ExperimentSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub periods_per_day: usize,
    pub days: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { periods_per_day: 288, days: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSection {
    pub file: Option<PathBuf>,
    /// Size of the synthesized fleet when no file is given.
    pub agents: usize,
}

impl Default for FleetSection {
    fn default() -> Self {
        FleetSection { file: None, agents: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HistorySection {
    /// Scenario CSVs: one shared by every microgrid, or one per microgrid.
    pub files: Vec<PathBuf>,
    /// Days synthesized per microgrid when no files are given.
    pub days: usize,
}

impl Default for HistorySection {
    fn default() -> Self {
        HistorySection { files: Vec::new(), days: 7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    #[default]
    Assa,
    Conventional,
    NoP2p,
    PriceTaker,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSection {
    pub mode: MarketKind,
    /// Bid-curve points for the conventional auction.
    pub dimension: usize,
    /// Scenario CSV whose price column is the price-taker series.
    pub prices_file: Option<PathBuf>,
}

impl Default for MarketSection {
    fn default() -> Self {
        MarketSection { mode: MarketKind::Assa, dimension: 10, prices_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DdooSection {
    /// Cap on stored scenarios (oldest dropped first).
    pub window: Option<usize>,
    pub rolling_update: bool,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub enforce_network: bool,
    pub delay_intervals: usize,
    pub verbose_trace: bool,
    pub verify_equilibria: bool,
    pub compute_gap: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags { enforce_network: false, delay_intervals: 0, verbose_trace: false, verify_equilibria: false, compute_gap: true }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub preset: Option<String>,
    #[serde(flatten)]
    pub options: ExperimentOverrides,
}

/// Experiment knobs; unset fields keep the preset defaults.
#[derive(Debug, Clone, PartialEq, Deserialize, Default)]
#[serde(default)]
pub struct ExperimentOverrides {
    pub agents: Option<usize>,
    pub days: Option<usize>,
    pub periods_per_day: Option<usize>,
    pub agent: Option<usize>,
    pub history_days: Option<usize>,
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("config: {}", one_line(&e.to_string()))))?;
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        self.fleet.file.iter_mut().for_each(fix);
        self.history.files.iter_mut().for_each(fix);
        self.tariff.iter_mut().for_each(fix);
        self.market.prices_file.iter_mut().for_each(fix);
    }

    /// Ranges and file existence; everything else is checked by the library.
    pub fn validate(&self) -> Result<()> {
        let files = self.fleet.file.iter().chain(&self.history.files).chain(&self.tariff).chain(&self.market.prices_file);
        for f in files {
            if !f.is_file() {
                return Err(Error::Config(format!("file not found: {}", f.display())));
            }
        }
        if self.grid.days == 0 || self.grid.periods_per_day == 0 {
            return Err(Error::Config("grid needs at least one day and one interval".into()));
        }
        if self.fleet.file.is_none() && self.fleet.agents == 0 {
            return Err(Error::Config("fleet.agents must be positive".into()));
        }
        if self.history.files.is_empty() && self.history.days == 0 {
            return Err(Error::Config("history.days must be positive".into()));
        }
        if self.market.mode == MarketKind::PriceTaker && self.market.prices_file.is_none() {
            return Err(Error::Config("market.prices_file is required in price_taker mode".into()));
        }
        if self.market.mode == MarketKind::Conventional && self.market.dimension == 0 {
            return Err(Error::Config("market.dimension must be positive".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be positive".into()));
        }
        self.assa.validate()?;
        self.strategies.iter().try_for_each(StrategyKind::validate)
    }

    pub fn grid(&self) -> Result<IntervalGrid> {
        IntervalGrid::new(self.grid.periods_per_day, self.grid.days)
    }

    fn fleet(&self, grid: &IntervalGrid) -> Result<Vec<MicrogridSpec>> {
        let Some(path) = &self.fleet.file else {
            return synth::generate_fleet(self.seed, self.fleet.agents, grid);
        };
        let mut fleet = io::load_fleet(path)?;
        for (k, mg) in fleet.iter_mut().enumerate() {
            if mg.load_kw.is_empty() && mg.res_kw.is_empty() {
                let reactive_given = !mg.reactive_load_kvar.is_empty();
                let q = std::mem::take(&mut mg.reactive_load_kvar);
                *mg = synth::synth_profiles(self.seed.wrapping_add(k as u64), mg, grid);
                if reactive_given {
                    mg.reactive_load_kvar = q;
                }
            }
            mg.validate(grid).map_err(|e| Error::Config(format!("microgrid {}: {e}", mg.id)))?;
        }
        Ok(fleet)
    }

    pub fn build(&self) -> Result<(SimInputs, SimConfig)> {
        let grid = self.grid()?;
        let periods = grid.periods_per_day;
        let tariff = match &self.tariff {
            Some(p) => io::load_tariff(p, periods)?,
            None => io::default_tariff(periods),
        };
        let fleet = self.fleet(&grid)?;
        let history = match self.history.files.as_slice() {
            [] => synth::synth_history(self.seed, &fleet, &tariff, periods, self.history.days)?,
            files => {
                let day_grid = IntervalGrid::new(periods, 1)?;
                let parsed = files.iter().map(|f| io::load_scenarios(f, &day_grid)).collect::<Result<Vec<_>>>()?;
                match (parsed.len(), fleet.len()) {
                    (1, n) => vec![parsed[0].clone(); n],
                    (a, b) if a == b => parsed,
                    (a, b) => return Err(Error::Config(format!("{a} history files for {b} microgrids"))),
                }
            }
        };
        let market = match self.market.mode {
            MarketKind::Assa => MarketMode::Assa,
            MarketKind::Conventional => MarketMode::Conventional { dimension: self.market.dimension },
            MarketKind::NoP2p => MarketMode::NoP2p,
            MarketKind::PriceTaker => {
                let path = self.market.prices_file.as_ref().expect("validated");
                let days = io::load_scenarios(path, &IntervalGrid::new(periods, 1)?)?;
                MarketMode::PriceTaker { prices: days.iter().flat_map(|d| d.price.iter().copied()).collect() }
            }
        };
        let mut cfg = SimConfig::new(grid, tariff);
        cfg.market = market;
        cfg.assa = self.assa;
        cfg.strategies = self.strategies.clone();
        cfg.enforce_network = self.flags.enforce_network;
        cfg.rolling_update = self.ddoo.rolling_update;
        cfg.window = self.ddoo.window;
        cfg.delay = self.flags.delay_intervals;
        cfg.verbose_trace = self.flags.verbose_trace;
        cfg.verify_equilibria = self.flags.verify_equilibria;
        cfg.compute_gap = self.flags.compute_gap;
        cfg.mc_samples = self.mc_samples;
        cfg.seed = self.seed;
        Ok((SimInputs { fleet, history }, cfg))
    }

    pub fn experiment_options(&self) -> ExperimentOptions {
        let d = ExperimentOptions::default();
        let o = &self.experiment.options;
        ExperimentOptions {
            seed: self.seed,
            agents: o.agents.unwrap_or(d.agents),
            days: o.days.unwrap_or(d.days),
            periods_per_day: o.periods_per_day.unwrap_or(d.periods_per_day),
            agent: o.agent.unwrap_or(d.agent),
            history_days: o.history_days.unwrap_or(d.history_days),
            mc_samples: self.mc_samples,
        }
    }
}

pub fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_valid_with_defaults() {
        let c = RunConfig::parse("", Path::new("/tmp")).unwrap();
        assert_eq!(c.grid.periods_per_day, 288);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/out"));
        assert_eq!(c.strategies, vec![StrategyKind::ddoo()]);
    }

    #[test]
    fn sections_parse() {
        let text = r#"
            seed = 3
            [grid]
            periods_per_day = 24
            days = 2
            [market]
            mode = "conventional"
            dimension = 5
            [assa]
            sigma0 = 1e-5
            [[strategies]]
            kind = "lyapunov"
            v = 100.0
            [experiment]
            preset = "phi-sweep"
            agents = 4
        "#;
        let c = RunConfig::parse(text, Path::new(".")).unwrap();
        assert_eq!(c.market.mode, MarketKind::Conventional);
        assert_eq!(c.assa.sigma0, 1e-5);
        assert_eq!(c.experiment.preset.as_deref(), Some("phi-sweep"));
        let o = c.experiment_options();
        assert_eq!((o.agents, o.seed, o.days), (4, 3, 7));
    }

    #[test]
    fn unknown_keys_and_missing_files_are_config_errors() {
        assert!(matches!(RunConfig::parse("sede = 1", Path::new(".")), Err(Error::Config(_))));
        let e = RunConfig::parse("[history]\nfiles = [\"nope.csv\"]", Path::new("/nonexistent")).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{e}");
        assert!(e.to_string().contains("nope.csv"));
    }

    #[test]
    fn bundled_example_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/example.toml");
        let c = RunConfig::load(&path).unwrap();
        assert_eq!(c.assa, AssaConfig::default());
        assert_eq!(c.strategies, vec![StrategyKind::ddoo()]);
        assert!(c.tariff.as_ref().unwrap().is_file());
    }

    #[test]
    fn price_taker_needs_prices() {
        assert!(RunConfig::parse("[market]\nmode = \"price_taker\"", Path::new(".")).is_err());
    }

    #[test]
    fn build_synthesizes_a_small_run() {
        let c = RunConfig::parse("mc_samples = 2000\n[grid]\nperiods_per_day = 24\n[fleet]\nagents = 2\n[history]\ndays = 2", Path::new(".")).unwrap();
        let (inputs, cfg) = c.build().unwrap();
        assert_eq!(inputs.fleet.len(), 2);
        assert_eq!(inputs.history[1].len(), 2);
        assert_eq!(cfg.grid.len(), 24);
    }
}
