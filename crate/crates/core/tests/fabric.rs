mod common;

use std::path::Path;
use std::time::Duration;

use common::{app_bundle, credential, expired_credential, file_uri};
use gridgate_core::dispatcher::render_broker_description;
use gridgate_core::fabric::{
    start_site, JobManagerKind, SiteConfig, SiteHandle, ToolRequirement, WrapperPhase,
    WrapperRequest,
};
use gridgate_core::model::{is_valid_path, parse_grid_uri, JobState};
use gridgate_core::wire::{ErrorCode, JobManagerClient, RpcError};

const RPC: Duration = Duration::from_secs(5);

async fn site(dir: &Path, id: &str, cpus: u32, kind: JobManagerKind, spe: f64) -> SiteHandle {
    let mut config = SiteConfig::new(id, cpus, kind, dir.join(id));
    config.seconds_per_event = spe;
    start_site(config).await.unwrap()
}

fn request(dir: &Path, index: u32, events: u64) -> WrapperRequest {
    let results = dir.join("results").join(index.to_string());
    std::fs::create_dir_all(&results).unwrap();
    WrapperRequest {
        jobset_id: "js-test".into(),
        job_index: index,
        app_bundle: app_bundle(dir),
        app_install_path: None,
        input_data: vec![],
        results_uri: parse_grid_uri(&format!("file://{}/", results.display())).unwrap(),
        events,
        physics_model: "atlfast".into(),
        seed: u64::from(index),
        toolcache: None,
    }
}

#[tokio::test]
async fn slots_bound_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let batch = site(dir.path(), "batch", 2, JobManagerKind::Batch, 0.002).await;
    let fork = site(dir.path(), "fork", 8, JobManagerKind::Fork, 0.002).await;
    for handle in [&batch, &fork] {
        let s = handle.site();
        let contacts: Vec<String> = (0..6)
            .map(|i| {
                s.gram_submit(request(dir.path(), i, 10), credential())
                    .unwrap()
            })
            .collect();
        for c in &contacts {
            assert_eq!(s.wait_terminal(c).await.unwrap(), JobState::Done);
            let states: Vec<JobState> = s
                .history(c)
                .unwrap()
                .into_iter()
                .map(|(_, st)| st)
                .collect();
            assert!(is_valid_path(&states), "{states:?}");
        }
        assert!(s.max_active() <= s.config().slots());
        assert!(s.max_active() >= 1);
    }
    assert_eq!(fork.site().max_active(), 1);
}

#[tokio::test]
async fn successful_job_runs_every_phase_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let h = site(dir.path(), "s", 1, JobManagerKind::Batch, 0.0).await;
    let req = request(dir.path(), 0, 25);
    let results = req.results_uri.clone();
    let c = h.site().gram_submit(req, credential()).unwrap();
    assert_eq!(h.site().wait_terminal(&c).await.unwrap(), JobState::Done);
    assert_eq!(h.site().phases(&c), WrapperPhase::ORDER.to_vec());
    assert_eq!(h.site().gram_status(&c).unwrap(), (JobState::Done, Some(0)));
    assert!(!h.site().workdir(&c).unwrap().exists());
    let out = Path::new(results.path());
    for f in ["ntuple.csv", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ntuple = std::fs::read_to_string(out.join("ntuple.csv")).unwrap();
    assert_eq!(ntuple.lines().count(), 26);
}

#[tokio::test]
async fn injected_failures_clean_up_and_report_run_exit() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = SiteConfig::new("flaky", 2, JobManagerKind::Batch, dir.path().join("flaky"));
    config.failure_rate = 1.0;
    config.seconds_per_event = 0.0;
    let h = start_site(config).await.unwrap();
    let req = request(dir.path(), 3, 10);
    let results = req.results_uri.clone();
    let c = h.site().gram_submit(req, credential()).unwrap();
    assert_eq!(h.site().wait_terminal(&c).await.unwrap(), JobState::Failed);
    assert_eq!(
        h.site().gram_status(&c).unwrap(),
        (JobState::Failed, Some(1))
    );
    assert_eq!(h.site().failed_phase(&c), Some(WrapperPhase::Run));
    assert_eq!(
        h.site().phases(&c),
        vec![
            WrapperPhase::InstallLibs,
            WrapperPhase::StageIn,
            WrapperPhase::Run,
            WrapperPhase::Cleanup
        ]
    );
    assert!(!h.site().workdir(&c).unwrap().exists());
    assert_eq!(std::fs::read_dir(results.path()).unwrap().count(), 0);
}

#[tokio::test]
async fn missing_inputs_fail_in_their_phase() {
    let dir = tempfile::tempdir().unwrap();
    let h = site(dir.path(), "s", 2, JobManagerKind::Batch, 0.0).await;

    let mut no_bundle = request(dir.path(), 0, 5);
    no_bundle.app_bundle = file_uri(&dir.path().join("absent.tar"));
    let c = h.site().gram_submit(no_bundle, credential()).unwrap();
    assert_eq!(h.site().wait_terminal(&c).await.unwrap(), JobState::Failed);
    assert_eq!(h.site().gram_status(&c).unwrap().1, Some(10));

    let mut no_input = request(dir.path(), 1, 5);
    no_input.input_data = vec![file_uri(&dir.path().join("absent.dat"))];
    let c = h.site().gram_submit(no_input, credential()).unwrap();
    assert_eq!(h.site().wait_terminal(&c).await.unwrap(), JobState::Failed);
    assert_eq!(h.site().gram_status(&c).unwrap().1, Some(11));
    assert_eq!(h.site().phases(&c).last(), Some(&WrapperPhase::Cleanup));

    // Preinstalled application path skips the bundle fetch.
    let mut preinstalled = request(dir.path(), 2, 5);
    preinstalled.app_bundle = file_uri(&dir.path().join("absent.tar"));
    preinstalled.app_install_path = Some(dir.path().display().to_string());
    let c = h.site().gram_submit(preinstalled, credential()).unwrap();
    assert_eq!(h.site().wait_terminal(&c).await.unwrap(), JobState::Done);
}

#[tokio::test]
async fn cancel_pending_and_active() {
    let dir = tempfile::tempdir().unwrap();
    let h = site(dir.path(), "slow", 1, JobManagerKind::Batch, 0.05).await;
    let s = h.site();
    let first = s
        .gram_submit(request(dir.path(), 0, 200), credential())
        .unwrap();
    let second = s
        .gram_submit(request(dir.path(), 1, 200), credential())
        .unwrap();
    while s.gram_status(&first).unwrap().0 != JobState::Active {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    assert_eq!(s.gram_status(&second).unwrap().0, JobState::Pending);
    assert_eq!(s.gram_cancel(&second).await.unwrap().0, JobState::Canceled);
    assert_eq!(s.gram_cancel(&first).await.unwrap().0, JobState::Canceled);
    // Idempotent on terminal jobs.
    assert_eq!(
        s.gram_cancel(&first).await.unwrap(),
        (JobState::Canceled, None)
    );
    for c in [&first, &second] {
        let states: Vec<JobState> = s
            .history(c)
            .unwrap()
            .into_iter()
            .map(|(_, st)| st)
            .collect();
        assert!(is_valid_path(&states), "{states:?}");
        assert!(!s.workdir(c).unwrap().exists());
    }
    assert_eq!(s.phases(&first).last(), Some(&WrapperPhase::Cleanup));
    assert_eq!(s.active_now(), 0);
}

#[tokio::test]
async fn admission_checks() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = SiteConfig::new("small", 1, JobManagerKind::Batch, dir.path().join("small"));
    config.queue_limit = 2;
    config.seconds_per_event = 0.05;
    let h = start_site(config).await.unwrap();
    let s = h.site();

    let err = s
        .gram_submit(request(dir.path(), 0, 1), expired_credential())
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::Auth);

    let mut needs_tools = request(dir.path(), 0, 1);
    needs_tools.toolcache = Some(ToolRequirement {
        name: "tools".into(),
        version: "1.0".into(),
    });
    let err = s.gram_submit(needs_tools, credential()).unwrap_err();
    assert_eq!(err.code, ErrorCode::CacheMissing);

    let running = s
        .gram_submit(request(dir.path(), 0, 100), credential())
        .unwrap();
    while s.gram_status(&running).unwrap().0 != JobState::Active {
        tokio::time::sleep(Duration::from_millis(5)).await;
    }
    s.gram_submit(request(dir.path(), 1, 100), credential())
        .unwrap();
    s.gram_submit(request(dir.path(), 2, 100), credential())
        .unwrap();
    let err = s
        .gram_submit(request(dir.path(), 3, 100), credential())
        .unwrap_err();
    assert_eq!(err.code, ErrorCode::QueueFull);
    for c in s.contacts() {
        s.gram_cancel(&c).await.unwrap();
    }
}

#[tokio::test]
async fn job_manager_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let h = site(dir.path(), "remote", 2, JobManagerKind::Batch, 0.0).await;
    let client = JobManagerClient::new(&h.jobmanager_contact(), RPC);
    assert_eq!(client.ping().await.unwrap(), "remote");
    let contact = client
        .submit(gridgate_core::wire::SubmitPayload {
            request: request(dir.path(), 0, 10),
            credential: credential(),
        })
        .await
        .unwrap();
    assert!(contact.starts_with("remote-"));
    h.site().wait_terminal(&contact).await.unwrap();
    assert_eq!(
        client.status(&contact).await.unwrap(),
        (JobState::Done, Some(0))
    );
    match client.status("remote-999999").await {
        Err(RpcError::Remote(e)) => assert_eq!(e.code, ErrorCode::UnknownContact),
        other => panic!("unexpected {other:?}"),
    }
    let dead = JobManagerClient::new("127.0.0.1:1", Duration::from_millis(300));
    assert!(dead.ping().await.unwrap_err().is_transport());
}

#[tokio::test]
async fn broker_accepts_descriptions_and_rejects_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let h = site(dir.path(), "broker", 2, JobManagerKind::Broker, 0.0).await;
    let client = JobManagerClient::new(&h.jobmanager_contact(), RPC);
    let spec = common::spec(dir.path(), 3, 10, "all");
    let mut spec = spec;
    spec.jobset_id = "js-b".into();
    let mut contacts = Vec::new();
    for i in 0..3 {
        let doc = render_broker_description(&spec, i, None);
        let cred = if i == 0 { None } else { Some(credential()) };
        contacts.push(client.submit_jdl(doc, cred).await.unwrap());
    }
    for c in &contacts {
        assert_eq!(h.site().wait_terminal(c).await.unwrap(), JobState::Done);
    }
    let out = Path::new(spec.results_uri(2).path()).join("summary.json");
    assert!(out.exists());

    for bad in [
        "",
        "Executable = \"x\";\n",
        "garbage line\n",
        "Executable = gridgate-wrapper;\n",
    ] {
        match client.submit_jdl(bad.into(), None).await {
            Err(RpcError::Remote(e)) => {
                assert_eq!(e.code, ErrorCode::MalformedDescription, "{bad:?}")
            }
            other => panic!("{bad:?} gave {other:?}"),
        }
    }
    // Batch sites do not take descriptions.
    let batch = site(dir.path(), "plain", 1, JobManagerKind::Batch, 0.0).await;
    let doc = render_broker_description(&spec, 0, None);
    assert!(JobManagerClient::new(&batch.jobmanager_contact(), RPC)
        .submit_jdl(doc, None)
        .await
        .is_err());
}
