//! Simulator configuration, loadable from TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, EcConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DeviceProfile {
    #[default]
    Ssd,
    Hdd,
}

/// Device cost per 4 KiB page in simulated microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceCosts {
    pub seq_read_us: f64,
    pub seq_write_us: f64,
    pub rand_read_us: f64,
    pub rand_write_us: f64,
}

impl DeviceCosts {
    pub fn for_profile(p: DeviceProfile) -> Self {
        let ssd = Self {
            seq_read_us: 40.0,
            seq_write_us: 50.0,
            rand_read_us: 150.0,
            rand_write_us: 200.0,
        };
        match p {
            DeviceProfile::Ssd => ssd,
            DeviceProfile::Hdd => Self {
                rand_read_us: ssd.rand_read_us * 25.0,
                rand_write_us: ssd.rand_write_us * 25.0,
                ..ssd
            },
        }
    }
}

/// Optional per-field overrides of the profile costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CostOverrides {
    pub seq_read_us: Option<f64>,
    pub seq_write_us: Option<f64>,
    pub rand_read_us: Option<f64>,
    pub rand_write_us: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetCosts {
    pub latency_us: f64,
    pub per_kib_us: f64,
}

impl Default for NetCosts {
    fn default() -> Self {
        // Roughly a 25 Gb/s link.
        Self {
            latency_us: 5.0,
            per_kib_us: 0.33,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolQuota {
    pub unit_capacity: u64,
    pub min_units: usize,
    pub max_units: usize,
    pub pools_per_device: usize,
}

impl Default for PoolQuota {
    fn default() -> Self {
        Self {
            unit_capacity: 16 << 20,
            min_units: 2,
            max_units: 4,
            pools_per_device: 4,
        }
    }
}

/// TSUE optimizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    /// DataLog merging.
    pub o1: bool,
    /// ParityLog merging.
    pub o2: bool,
    /// Elastic pool sizing.
    pub o3: bool,
    /// Several pools per device.
    pub o4: bool,
    /// DeltaLog stage.
    pub o5: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self::all()
    }
}

impl Flags {
    pub fn all() -> Self {
        Self {
            o1: true,
            o2: true,
            o3: true,
            o4: true,
            o5: true,
        }
    }

    pub fn none() -> Self {
        Self {
            o1: false,
            o2: false,
            o3: false,
            o4: false,
            o5: false,
        }
    }

    /// Parses a comma-separated list of enabled flags, e.g. `o1,o2`.
    /// Unlisted flags are off; an empty string disables everything.
    pub fn parse_list(s: &str) -> Result<Self, ConfigError> {
        let mut f = Self::none();
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok.to_ascii_lowercase().as_str() {
                "o1" => f.o1 = true,
                "o2" => f.o2 = true,
                "o3" => f.o3 = true,
                "o4" => f.o4 = true,
                "o5" => f.o5 = true,
                other => return Err(ConfigError::Invalid(format!("unknown flag {other:?}"))),
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub cluster_size: usize,
    pub k: usize,
    pub m: usize,
    pub block_size: u64,
    pub device: DeviceProfile,
    pub costs: CostOverrides,
    pub network: NetCosts,
    pub pools: PoolQuota,
    /// Copies of each DataLog and DeltaLog record, primary included.
    /// Defaults to 2 on SSD and 3 on HDD.
    pub replication: Option<usize>,
    pub flags: Flags,
    pub tick_us: u64,
    /// Per-node parity-log budget of PL and PARIX.
    pub parity_log_budget: u64,
    /// Fraction of the budget that triggers recycling.
    pub parity_log_threshold: f64,
    /// Reserved log space next to each parity block under PLR.
    pub plr_reserved: u64,
    /// CoRD collector buffer size.
    pub cord_buffer: u64,
    /// Stripes assigned to each trace volume.
    pub stripes_per_volume: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cluster_size: 16,
            k: 6,
            m: 4,
            block_size: 4 << 20,
            device: DeviceProfile::Ssd,
            costs: CostOverrides::default(),
            network: NetCosts::default(),
            pools: PoolQuota::default(),
            replication: None,
            flags: Flags::all(),
            tick_us: 10_000,
            parity_log_budget: 32 << 20,
            parity_log_threshold: 0.75,
            plr_reserved: 256 << 10,
            cord_buffer: 16 << 20,
            stripes_per_volume: 256,
        }
    }
}

impl SimConfig {
    /// RS(4,2) on 8 nodes with 64 KiB blocks and small logs, for quick runs.
    pub fn small() -> Self {
        Self {
            cluster_size: 8,
            k: 4,
            m: 2,
            block_size: 64 << 10,
            pools: PoolQuota {
                unit_capacity: 64 << 10,
                min_units: 2,
                max_units: 4,
                pools_per_device: 2,
            },
            tick_us: 1000,
            parity_log_budget: 256 << 10,
            plr_reserved: 64 << 10,
            cord_buffer: 128 << 10,
            stripes_per_volume: 16,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn ec(&self) -> Result<EcConfig, ConfigError> {
        Ok(EcConfig::new(self.k, self.m, self.block_size)?)
    }

    pub fn device_costs(&self) -> DeviceCosts {
        let base = DeviceCosts::for_profile(self.device);
        DeviceCosts {
            seq_read_us: self.costs.seq_read_us.unwrap_or(base.seq_read_us),
            seq_write_us: self.costs.seq_write_us.unwrap_or(base.seq_write_us),
            rand_read_us: self.costs.rand_read_us.unwrap_or(base.rand_read_us),
            rand_write_us: self.costs.rand_write_us.unwrap_or(base.rand_write_us),
        }
    }

    pub fn replication(&self) -> usize {
        self.replication.unwrap_or(match self.device {
            DeviceProfile::Ssd => 2,
            DeviceProfile::Hdd => 3,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ec = self.ec()?;
        if self.cluster_size < ec.width() {
            return Err(ConfigError::Invalid(format!(
                "cluster of {} nodes cannot hold RS({},{}) stripes",
                self.cluster_size, self.k, self.m
            )));
        }
        let r = self.replication();
        if r == 0 || r > self.cluster_size {
            return Err(ConfigError::Invalid(format!("replication {r} out of range")));
        }
        let p = &self.pools;
        if p.min_units < 2 || p.min_units > p.max_units || p.max_units > 20 {
            return Err(ConfigError::Invalid(format!(
                "pool units must satisfy 2 <= min ({}) <= max ({}) <= 20",
                p.min_units, p.max_units
            )));
        }
        if p.unit_capacity == 0 || p.pools_per_device == 0 {
            return Err(ConfigError::Invalid("pool capacity and count must be positive".into()));
        }
        if self.tick_us == 0 {
            return Err(ConfigError::Invalid("tick period must be positive".into()));
        }
        if !(self.parity_log_threshold > 0.0 && self.parity_log_threshold <= 1.0) {
            return Err(ConfigError::Invalid("parity log threshold must be in (0, 1]".into()));
        }
        if self.parity_log_budget == 0 || self.plr_reserved == 0 || self.cord_buffer == 0 {
            return Err(ConfigError::Invalid("log budgets must be positive".into()));
        }
        if self.stripes_per_volume == 0 {
            return Err(ConfigError::Invalid("stripes_per_volume must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = SimConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.replication(), 2);
        assert_eq!(cfg.device_costs().rand_write_us, 200.0);
    }

    #[test]
    fn toml_overrides() {
        let cfg = SimConfig::from_toml(
            r#"
            k = 4
            m = 2
            device = "hdd"
            [costs]
            seq_write_us = 10.0
            [flags]
            o5 = false
            "#,
        )
        .unwrap();
        assert_eq!((cfg.k, cfg.m), (4, 2));
        assert_eq!(cfg.replication(), 3);
        let c = cfg.device_costs();
        assert_eq!(c.seq_write_us, 10.0);
        assert_eq!(c.rand_read_us, 150.0 * 25.0);
        assert!(cfg.flags.o4 && !cfg.flags.o5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(SimConfig::from_toml("cluster_size = 5").is_err());
        assert!(SimConfig::from_toml("block_size = 100").is_err());
        assert!(SimConfig::from_toml("bogus = 1").is_err());
        assert!(SimConfig::from_toml("[pools]\nmax_units = 21").is_err());
    }

    #[test]
    fn flag_lists() {
        let f = Flags::parse_list("o1, O3").unwrap();
        assert!(f.o1 && !f.o2 && f.o3 && !f.o4 && !f.o5);
        assert_eq!(Flags::parse_list("").unwrap(), Flags::none());
        assert!(Flags::parse_list("o6").is_err());
    }
}
