//! Dispatcher and monitor against a live in-process fabric.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Duration;

use common::{
    count_states, credential, expired_credential, oracle_dataset, wait_terminal, Deployment,
};
use gridgate_core::model::{is_valid_subsequence, JobState};
use gridgate_core::monitor::MonitorError;
use gridgate_core::registry::ResourceRecord;

const LIMIT: Duration = Duration::from_secs(30);

#[tokio::test]
async fn jobs_reach_site_and_partition_exactly() {
    let d = Deployment::start(&[2, 2], 0.0, 0.0).await;
    let id = d.portal.submit_jobset(d.spec(4, 5)).unwrap();
    d.portal.wait_submitted(&id).await;
    let records = d.portal.jobs().for_jobset(&id);
    assert_eq!(records.len(), 4);
    for r in &records {
        assert!(r.contact.is_some(), "{r:?}");
        assert!(r.state != JobState::Unsubmitted);
    }
    let plan = d.portal.entry(&id).unwrap().plan;
    assert_eq!(
        plan.counts(),
        vec![("site-01".into(), 2), ("site-02".into(), 2)]
    );
    for alloc in &plan.allocations {
        let site = d.fabric.site(&alloc.site_id).unwrap().site();
        let contacts: BTreeSet<String> = records
            .iter()
            .filter(|r| r.site_id == alloc.site_id)
            .map(|r| r.contact.clone().unwrap())
            .collect();
        assert_eq!(contacts.len(), alloc.job_indices.len());
        assert_eq!(contacts, site.contacts().into_iter().collect());
    }
}

#[tokio::test]
async fn unreachable_site_fails_only_its_jobs() {
    let mut d = Deployment::start(&[1, 1], 0.0, 0.0).await;
    let dead = ResourceRecord {
        jobmanager_contact: "127.0.0.1:1/jobmanager-batch".into(),
        fileserver_contact: "127.0.0.1:1".into(),
        ..d.fabric.resource_records()[1].clone()
    };
    d.portal.registry().upsert_resource(dead).unwrap();
    let id = d.portal.submit_jobset(d.spec(4, 5)).unwrap();
    assert!(wait_terminal(&d.portal, &id, LIMIT).await);
    for r in d.portal.jobs().for_jobset(&id) {
        if r.site_id == "site-02" {
            assert_eq!(r.state, JobState::Unsubmitted);
            assert!(r.submit_error.is_some());
        } else {
            assert_eq!(r.state, JobState::Done);
        }
    }
    d.fabric.stop_site("site-02");
}

#[tokio::test]
async fn toolcache_transferred_once_across_jobsets() {
    let d = Deployment::start(&[3], 0.0, 0.0).await;
    let a = d.portal.submit_jobset(d.spec(4, 2)).unwrap();
    let b = d.portal.submit_jobset(d.spec(4, 2)).unwrap();
    d.portal.wait_submitted(&a).await;
    d.portal.wait_submitted(&b).await;
    assert_eq!(d.portal.dispatcher().deployer().payload_transfers(), 1);
}

#[tokio::test]
async fn polling_collects_outputs_then_goes_quiet() {
    let d = Deployment::start(&[2, 3], 0.0, 0.0).await;
    let spec = d.spec(6, 40);
    let id = d.portal.submit_jobset(spec.clone()).unwrap();
    assert!(wait_terminal(&d.portal, &id, LIMIT).await);
    assert_eq!(count_states(&d.portal, &id).get(&JobState::Done), Some(&6));
    for r in d.portal.jobs().for_jobset(&id) {
        let states: Vec<JobState> = r.state_history.iter().map(|(_, s)| *s).collect();
        assert!(is_valid_subsequence(&states), "{states:?}");
        r.check_invariants().unwrap();
        assert_eq!(r.output_uris.len(), 2);
        for name in ["ntuple.csv", "summary.json"] {
            let lfn = format!("{id}/{}/{name}", r.job_index);
            assert_eq!(d.portal.catalog().lookup_replica(&lfn).len(), 1, "{lfn}");
        }
        assert!(r.output_uris.iter().all(|u| Path::new(u.path()).exists()));
    }
    let calls = d.portal.monitor().rpc_calls();
    let ids: Vec<String> = d.portal.entry(&id).unwrap().job_ids;
    d.portal.monitor().poll_jobs(&ids).await;
    assert_eq!(d.portal.monitor().rpc_calls(), calls);

    let summary = d.portal.monitor().update_summary(&id).await.unwrap();
    assert_eq!(summary.jobs_done, 6);
    assert_eq!(summary.jobs_total, 6);
    assert_eq!(
        summary.histogram,
        oracle_dataset(6, 40, "atlfast", spec.rng_seed_base)
    );
}

#[tokio::test]
async fn missing_summary_is_reported_and_recovered() {
    let d = Deployment::start(&[2], 0.0, 0.0).await;
    let id = d.portal.submit_jobset(d.spec(3, 10)).unwrap();
    assert!(wait_terminal(&d.portal, &id, LIMIT).await);
    let spec = d.portal.entry(&id).unwrap().spec;
    let file = Path::new(spec.results_uri(1).path()).join("summary.json");
    let saved = std::fs::read(&file).unwrap();
    std::fs::remove_file(&file).unwrap();

    let first = d.portal.monitor().update_summary(&id).await.unwrap();
    assert_eq!(first.jobs_done, 2);
    assert_eq!(first.missing_results, vec![format!("{id}.1")]);
    assert_eq!(first.histogram.values().sum::<u64>(), 20);

    std::fs::write(&file, saved).unwrap();
    let second = d.portal.monitor().update_summary(&id).await.unwrap();
    assert_eq!(second.jobs_done, 3);
    assert!(second.missing_results.is_empty());
    assert_eq!(
        second.histogram,
        oracle_dataset(3, 10, "atlfast", spec.rng_seed_base)
    );

    // Removing the file after it was counted does not un-count it.
    std::fs::remove_file(&file).unwrap();
    let third = d.portal.monitor().update_summary(&id).await.unwrap();
    assert_eq!(
        (third.jobs_done, &third.histogram),
        (second.jobs_done, &second.histogram)
    );
}

#[tokio::test]
async fn stale_when_site_goes_down() {
    let mut d = Deployment::start(&[1], 0.05, 0.0).await;
    let id = d.portal.submit_jobset(d.spec(2, 1000)).unwrap();
    d.portal.wait_submitted(&id).await;
    d.fabric.stop_site("site-01");
    let ids = d.portal.entry(&id).unwrap().job_ids;
    let out = d.portal.monitor().poll_jobs(&ids).await;
    for s in &out {
        assert!(s.stale, "{s:?}");
        assert_eq!(s.state, Some(JobState::Pending));
    }
    let r = d.portal.jobs().get(&ids[0]).unwrap();
    assert!(r.stale && r.stale_since.is_some());
    for c in d.fabric.site("site-01").unwrap().site().contacts() {
        d.fabric
            .site("site-01")
            .unwrap()
            .site()
            .gram_cancel(&c)
            .await
            .unwrap();
    }
}

#[tokio::test]
async fn cancel_is_authorized_and_idempotent() {
    let d = Deployment::start(&[1], 0.05, 0.0).await;
    let id = d.portal.submit_jobset(d.spec(3, 1000)).unwrap();
    d.portal.wait_submitted(&id).await;
    let ids = d.portal.entry(&id).unwrap().job_ids;

    let before = d.portal.jobs().for_jobset(&id);
    assert!(matches!(
        d.portal
            .monitor()
            .cancel_jobs(&ids, &expired_credential())
            .await,
        Err(MonitorError::Auth(_))
    ));
    assert_eq!(d.portal.jobs().for_jobset(&id), before);

    let out = d
        .portal
        .monitor()
        .cancel_jobs(&ids, &credential())
        .await
        .unwrap();
    assert!(
        out.iter().all(|s| s.state == Some(JobState::Canceled)),
        "{out:?}"
    );
    let calls = d.portal.monitor().rpc_calls();
    let again = d
        .portal
        .monitor()
        .cancel_jobs(&ids, &credential())
        .await
        .unwrap();
    assert_eq!(again, out);
    assert_eq!(d.portal.monitor().rpc_calls(), calls);
    let unknown = d
        .portal
        .monitor()
        .cancel_jobs(&["nope.0".into()], &credential())
        .await
        .unwrap();
    assert!(unknown[0].error.is_some());
}

#[tokio::test]
async fn resubmit_replays_allocation_with_fresh_seeds() {
    let d = Deployment::start(&[3, 2, 1], 0.0, 0.0).await;
    let id = d.portal.submit_jobset(d.spec(7, 2)).unwrap();
    let again = d.portal.resubmit(&id).unwrap();
    assert_ne!(id, again);
    let (a, b) = (
        d.portal.entry(&id).unwrap(),
        d.portal.entry(&again).unwrap(),
    );
    assert_eq!(a.plan.counts(), b.plan.counts());
    assert_eq!(b.spec.rng_seed_base, a.spec.rng_seed_base + 7);
    assert!(matches!(
        d.portal.resubmit("js-999999"),
        Err(gridgate_core::portal::PortalError::NotFound(_))
    ));
    assert!(wait_terminal(&d.portal, &id, LIMIT).await);
    assert!(wait_terminal(&d.portal, &again, LIMIT).await);
}
