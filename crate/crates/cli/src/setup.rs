//! Knowledge base, model and engine selection shared by the front-ends.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use pear_core::demo::demo_provider;
use pear_core::executor::{ExecMode, MockScenario};
use pear_core::kb::{load_kb, KnowledgeBase};
use pear_core::llm::remote::DEFAULT_TIMEOUT;
use pear_core::llm::{FaultConfig, Gateway, RemoteProvider};
use rand::{Rng, SeedableRng};

/// Model name that selects the built-in rule-following model.
pub const BUILTIN_LLM: &str = "builtin";

/// `demo` is the bundled knowledge base; anything else is a directory.
pub fn knowledge_base(source: &str) -> anyhow::Result<KnowledgeBase> {
    if source == "demo" {
        return Ok(KnowledgeBase::demo());
    }
    let kb = load_kb(Path::new(source)).with_context(|| format!("loading knowledge base {source}"))?;
    for w in &kb.warnings {
        tracing::warn!("{w}");
    }
    Ok(kb)
}

/// A gateway for `model`: the built-in model, or the remote endpoint
/// configured through the environment.
pub fn gateway(model: &str) -> anyhow::Result<Gateway> {
    if model == BUILTIN_LLM {
        return Ok(Gateway::new(Arc::new(demo_provider(FaultConfig::none())), model));
    }
    let provider = RemoteProvider::from_env(DEFAULT_TIMEOUT).context("configuring the model endpoint")?;
    Ok(Gateway::new(Arc::new(provider), model))
}

/// The default mock scenario, or one drawn from `seed`.
pub fn mock_scenario(seed: Option<u64>) -> MockScenario {
    let Some(seed) = seed else { return MockScenario::default() };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    MockScenario {
        needed_probe_modes: rng.gen_range(1..=12),
        needs_layer_reg: rng.gen_bool(0.5),
        target_blur: [0.0, 0.5, 1.0, 1.5, 2.0][rng.gen_range(0..5)],
        has_drift: rng.gen_bool(0.3),
        min_iterations: [50, 100, 200][rng.gen_range(0..3)],
    }
}

/// The mock engine, or an external command run with `-batch`.
pub fn exec_mode(mock: bool, recon_cmd: Option<&str>, seed: Option<u64>, timeout: Duration) -> ExecMode {
    match recon_cmd {
        Some(command) if !mock => ExecMode::External {
            command: command.to_string(),
            timeout,
        },
        _ => ExecMode::Mock(mock_scenario(seed)),
    }
}

/// This machine's name for the settings banner.
pub fn host_name() -> String {
    std::env::var("HOSTNAME")
        .ok()
        .or_else(|| std::fs::read_to_string("/proc/sys/kernel/hostname").ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "localhost".into())
}
