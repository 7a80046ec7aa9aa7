use std::path::{Path, PathBuf};
use std::time::Duration;

use gridgate_core::model::JobsetSpec;
use serde::Deserialize;

/// Periodic submission of one jobset template.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchPolicy {
    /// Template path; relative paths resolve against the policy file.
    pub jobset_template: PathBuf,
    /// Seconds between rounds; strictly positive.
    pub interval: f64,
    /// `None` runs until interrupted.
    #[serde(default)]
    pub max_rounds: Option<u64>,
}

impl BatchPolicy {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut policy: BatchPolicy =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if !(policy.interval.is_finite() && policy.interval > 0.0) {
            return Err(format!("{}: interval must be positive", path.display()));
        }
        if policy.jobset_template.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            policy.jobset_template = base.join(&policy.jobset_template);
        }
        Ok(policy)
    }

    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(self.interval)
    }

    pub fn rounds(&self) -> impl Iterator<Item = u64> {
        (0..).take_while({
            let max = self.max_rounds;
            move |r| max.is_none_or(|m| *r < m)
        })
    }
}

/// The jobset sent in round `round`. The template is re-read every round
/// and each round draws fresh seeds, so the only carried state is `round`.
pub fn round_spec(template: &JobsetSpec, round: u64) -> JobsetSpec {
    let mut spec = template.clone();
    spec.jobset_id.clear();
    spec.rng_seed_base = template
        .rng_seed_base
        .wrapping_add(round.wrapping_mul(u64::from(template.job_count)));
    spec
}
