//! Rack configuration files.

use std::path::Path;

use nearmem_core::accelerator::{AcceleratorConfig, CoreConfig};
use nearmem_core::fabric::LinkConfig;
use nearmem_core::isa::DEFAULT_SCRATCH_PAD_BYTES;
use nearmem_core::memory::AllocationPolicy;
use nearmem_core::rack::RackConfig;
use nearmem_core::SimTime;
use serde::{Deserialize, Serialize};

/// Largest rack the CLI accepts. Partition bases leave room for far more.
pub const MAX_NODES: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Flat JSON view of a rack. Times are in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub nodes: usize,
    pub cores_per_node: usize,
    pub eta: usize,
    pub t_d_ns: f64,
    pub t_i_ns: f64,
    pub max_iter: u16,
    pub scratch_pad_bytes: usize,
    /// Latency of each link, CPU to switch and switch to node.
    pub link_ns: f64,
    pub stack_ns: f64,
    pub drop_prob: f64,
    pub seed: u64,
    pub chase_acc: bool,
    pub allocation_policy: AllocationPolicy,
    pub workspaces_per_logic: usize,
    pub t_sched_ns: f64,
    pub timeout_ns: Option<f64>,
    pub max_retransmits: u32,
    pub cpu_processing_ns: f64,
    pub host_instr_ns: f64,
    pub mem_channels: Option<usize>,
    pub node_capacity: u64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        let rack = RackConfig::default();
        let core = &rack.accelerator.core;
        ConfigFile {
            nodes: rack.nodes,
            cores_per_node: rack.accelerator.cores,
            eta: core.eta,
            t_d_ns: core.t_d.as_ns_f64(),
            t_i_ns: core.t_i_ns,
            max_iter: core.max_iter,
            scratch_pad_bytes: DEFAULT_SCRATCH_PAD_BYTES,
            link_ns: rack.link.switch_node.as_ns_f64(),
            stack_ns: rack.link.stack.as_ns_f64(),
            drop_prob: 0.0,
            seed: 0,
            chase_acc: false,
            allocation_policy: rack.allocation_policy,
            workspaces_per_logic: core.workspaces_per_logic,
            t_sched_ns: core.t_sched.as_ns_f64(),
            timeout_ns: None,
            max_retransmits: rack.max_retransmits,
            cpu_processing_ns: rack.cpu_processing.as_ns_f64(),
            host_instr_ns: rack.host_instr_ns,
            mem_channels: None,
            node_capacity: rack.node_capacity,
        }
    }
}

fn time(name: &str, ns: f64) -> Result<SimTime, ConfigError> {
    if !ns.is_finite() || !(0.0..=1e12).contains(&ns) {
        return Err(ConfigError::Invalid(format!("{name} must be a finite time in [0, 1e12] ns, got {ns}")));
    }
    Ok(SimTime::from_ns_f64(ns))
}

fn positive(name: &str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::Invalid(format!("{name} must be positive")));
    }
    Ok(())
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })
    }

    /// Validates every field and converts to the simulator's configuration.
    pub fn to_rack(&self) -> Result<RackConfig, ConfigError> {
        positive("nodes", self.nodes)?;
        if self.nodes > MAX_NODES {
            return Err(ConfigError::Invalid(format!("nodes must be at most {MAX_NODES}")));
        }
        positive("cores_per_node", self.cores_per_node)?;
        positive("eta", self.eta)?;
        positive("workspaces_per_logic", self.workspaces_per_logic)?;
        positive("scratch_pad_bytes", self.scratch_pad_bytes)?;
        if self.mem_channels == Some(0) {
            return Err(ConfigError::Invalid("mem_channels must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(ConfigError::Invalid("max_iter must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(ConfigError::Invalid(format!("drop_prob must be in [0, 1), got {}", self.drop_prob)));
        }
        if self.node_capacity == 0 || self.node_capacity > 1 << 40 {
            return Err(ConfigError::Invalid("node_capacity must be in 1..=2^40".into()));
        }
        let t_d = time("t_d_ns", self.t_d_ns)?;
        if t_d == SimTime::ZERO {
            return Err(ConfigError::Invalid("t_d_ns must be positive".into()));
        }
        time("t_i_ns", self.t_i_ns)?;
        time("host_instr_ns", self.host_instr_ns)?;
        let link = time("link_ns", self.link_ns)?;
        let timeout = self.timeout_ns.map(|t| time("timeout_ns", t)).transpose()?;
        if timeout == Some(SimTime::ZERO) {
            return Err(ConfigError::Invalid("timeout_ns must be positive".into()));
        }
        Ok(RackConfig {
            nodes: self.nodes,
            accelerator: AcceleratorConfig {
                cores: self.cores_per_node,
                core: CoreConfig {
                    eta: self.eta,
                    workspaces_per_logic: self.workspaces_per_logic,
                    t_d,
                    t_i_ns: self.t_i_ns,
                    t_sched: time("t_sched_ns", self.t_sched_ns)?,
                    max_iter: self.max_iter,
                    scratch_pad_bytes: self.scratch_pad_bytes,
                },
                mem_channels: self.mem_channels,
                detour_on_miss: self.chase_acc,
                trace: false,
            },
            link: LinkConfig {
                cpu_switch: link,
                switch_node: link,
                stack: time("stack_ns", self.stack_ns)?,
                drop_probability: self.drop_prob,
            },
            seed: self.seed,
            allocation_policy: self.allocation_policy,
            node_capacity: self.node_capacity,
            timeout,
            max_retransmits: self.max_retransmits,
            cpu_processing: time("cpu_processing_ns", self.cpu_processing_ns)?,
            host_instr_ns: self.host_instr_ns,
        })
    }
}
