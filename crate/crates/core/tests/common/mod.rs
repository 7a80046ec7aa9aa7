//! Test fixtures and independent oracles shared by the integration tests.
//!
//! The oracles here deliberately do not call into the crate's own hashing
//! or allocation code.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::Utc;
use gridgate_core::fabric::{batch_sites, Fabric};
use gridgate_core::model::{parse_grid_uri, GridUri, JobState, JobsetSpec};
use gridgate_core::portal::{Portal, PortalConfig, PortalOptions};
use gridgate_core::registry::ResourceRecord;
use gridgate_core::ProxyCredential;

pub fn credential() -> ProxyCredential {
    ProxyCredential::root(
        "/O=Grid/CN=test user",
        Utc::now() + chrono::Duration::days(1),
        "0123456789abcdef",
    )
}

pub fn expired_credential() -> ProxyCredential {
    ProxyCredential::root(
        "/O=Grid/CN=test user",
        Utc::now() - chrono::Duration::seconds(1),
        "0123456789abcdef",
    )
}

pub fn file_uri(path: &Path) -> GridUri {
    parse_grid_uri(&format!("file://{}", path.display())).unwrap()
}

/// Writes a small application bundle and returns its URI.
pub fn app_bundle(dir: &Path) -> GridUri {
    let path = dir.join("app-bundle.tar");
    std::fs::write(&path, b"simulated application bundle\n").unwrap();
    file_uri(&std::fs::canonicalize(path).unwrap())
}

pub fn spec(dir: &Path, jobs: u32, events: u64, active_set: &str) -> JobsetSpec {
    let results = dir.join("results");
    std::fs::create_dir_all(&results).unwrap();
    JobsetSpec {
        jobset_id: String::new(),
        app_bundle: app_bundle(dir),
        input_data: vec![],
        results_base: parse_grid_uri(&format!(
            "file://{}/",
            std::fs::canonicalize(results).unwrap().display()
        ))
        .unwrap(),
        events_per_job: events,
        physics_model: "atlfast".into(),
        job_count: jobs,
        rng_seed_base: 7,
        active_set: active_set.into(),
    }
}

/// A portal over a fresh fabric, with every site registered in the active
/// set `all`.
pub struct Deployment {
    pub dir: tempfile::TempDir,
    pub fabric: Fabric,
    pub portal: Arc<Portal>,
}

impl Deployment {
    pub async fn start(cpus: &[u32], seconds_per_event: f64, failure_rate: f64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let fabric = Fabric::start(batch_sites(
            &dir.path().join("sites"),
            cpus,
            seconds_per_event,
            failure_rate,
        ))
        .await
        .unwrap();
        Self::with_fabric(dir, fabric).await
    }

    pub async fn with_fabric(dir: tempfile::TempDir, fabric: Fabric) -> Self {
        let config = PortalConfig::in_dir(&dir.path().join("portal"));
        let options = PortalOptions {
            rpc_timeout: Duration::from_secs(5),
            probe_timeout: Duration::from_millis(500),
        };
        let portal = Portal::start(config, credential(), options).await.unwrap();
        register(&portal, fabric.resource_records());
        Deployment {
            dir,
            fabric,
            portal,
        }
    }

    pub fn path(&self) -> PathBuf {
        self.dir.path().to_path_buf()
    }

    pub fn spec(&self, jobs: u32, events: u64) -> JobsetSpec {
        spec(self.dir.path(), jobs, events, "all")
    }
}

pub fn register(portal: &Portal, records: Vec<ResourceRecord>) {
    let ids: Vec<String> = records.iter().map(|r| r.site_id.clone()).collect();
    for r in records {
        portal.registry().upsert_resource(r).unwrap();
    }
    portal.registry().define_active_set("all", &ids).unwrap();
}

/// Polls until every job of the jobset is terminal or `limit` passes.
pub async fn wait_terminal(portal: &Portal, jobset_id: &str, limit: Duration) -> bool {
    portal.wait_submitted(jobset_id).await;
    let deadline = Instant::now() + limit;
    loop {
        let ids: Vec<String> = portal
            .jobs()
            .for_jobset(jobset_id)
            .into_iter()
            .map(|r| r.job_id)
            .collect();
        portal.monitor().poll_jobs(&ids).await;
        let records = portal.jobs().for_jobset(jobset_id);
        if records
            .iter()
            .all(|r| r.state.is_terminal() || r.submit_error.is_some())
        {
            return true;
        }
        if Instant::now() > deadline {
            return false;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

pub fn count_states(portal: &Portal, jobset_id: &str) -> BTreeMap<JobState, usize> {
    let mut out = BTreeMap::new();
    for r in portal.jobs().for_jobset(jobset_id) {
        *out.entry(r.state).or_default() += 1;
    }
    out
}

// ---- independent oracles ----

/// 64-bit FNV-1a, written out from the published constants.
pub fn oracle_fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Summary histogram of one job, recomputed by re-hashing every event.
pub fn oracle_histogram(events: u64, model: &str, seed: u64) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for index in 0..events {
        let mut key = model.as_bytes().to_vec();
        key.push(0);
        key.extend_from_slice(&seed.to_le_bytes());
        key.extend_from_slice(&index.to_le_bytes());
        *out.entry((oracle_fnv1a64(&key) % 10) as u32).or_insert(0) += 1;
    }
    out
}

/// Merged histogram of a whole jobset of `jobs` jobs.
pub fn oracle_dataset(jobs: u32, events: u64, model: &str, seed_base: u64) -> BTreeMap<u32, u64> {
    let mut out = BTreeMap::new();
    for i in 0..jobs {
        for (bin, n) in oracle_histogram(events, model, seed_base + u64::from(i)) {
            *out.entry(bin).or_insert(0) += n;
        }
    }
    out
}

/// Enumerates every non-negative integer vector of length `k` summing to `n`.
fn compositions(n: u64, k: usize, prefix: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
    if k == 1 {
        prefix.push(n);
        out.push(prefix.clone());
        prefix.pop();
        return;
    }
    for first in 0..=n {
        prefix.push(first);
        compositions(n - first, k - 1, prefix, out);
        prefix.pop();
    }
}

/// Brute-force apportionment for integer powers: among all count vectors
/// summing to `n`, those at minimal L1 distance from the quotas, computed
/// exactly in integers scaled by Σp. Ties go to the vector whose above-quota
/// sites, ranked by (larger power, lower index), are lexicographically best.
pub fn oracle_allocate(n: u64, powers: &[u64]) -> Vec<u64> {
    let total: u64 = powers.iter().sum();
    let mut all = Vec::new();
    compositions(n, powers.len(), &mut Vec::new(), &mut all);
    let distance = |c: &[u64]| -> u64 {
        c.iter()
            .zip(powers)
            .map(|(ci, pi)| (ci * total).abs_diff(n * pi))
            .sum()
    };
    let best = all.iter().map(|c| distance(c)).min().unwrap();
    let rank = |c: &[u64]| -> Vec<(u64, std::cmp::Reverse<usize>)> {
        let mut above: Vec<_> = c
            .iter()
            .enumerate()
            .filter(|(i, ci)| **ci * total > n * powers[*i])
            .map(|(i, _)| (powers[i], std::cmp::Reverse(i)))
            .collect();
        above.sort_by(|a, b| b.cmp(a));
        above
    };
    all.into_iter()
        .filter(|c| distance(c) == best)
        .max_by(|a, b| rank(a).cmp(&rank(b)))
        .unwrap()
}

/// Largest-remainder apportionment in exact integer arithmetic, for instances
/// too large to enumerate. Agrees with [`oracle_allocate`] wherever both run.
pub fn oracle_largest_remainder(n: u64, powers: &[u64]) -> Vec<u64> {
    let total: u64 = powers.iter().sum();
    let mut counts: Vec<u64> = powers.iter().map(|p| n * p / total).collect();
    let left = n - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..powers.len()).collect();
    order.sort_by_key(|&i| {
        (
            std::cmp::Reverse(n * powers[i] % total),
            std::cmp::Reverse(powers[i]),
            i,
        )
    });
    for &i in order.iter().take(left as usize) {
        counts[i] += 1;
    }
    counts
}
