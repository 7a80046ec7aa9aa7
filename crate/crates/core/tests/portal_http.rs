mod common;

use std::time::Duration;

use common::{credential, expired_credential, wait_terminal, Deployment};
use gridgate_core::fabric::{batch_sites, Fabric};
use gridgate_core::portal::{
    serve_portal, Portal, PortalConfig, PortalOptions, RunningPortal, TOKEN_HEADER,
};
use reqwest::{Client, StatusCode};
use serde_json::{json, Value};

struct Api {
    running: RunningPortal,
    client: Client,
    token: String,
}

impl Api {
    async fn new(d: &Deployment) -> Self {
        Api {
            running: serve_portal(d.portal.clone(), "127.0.0.1:0").await.unwrap(),
            client: Client::new(),
            token: credential().token,
        }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.running.url())
    }

    async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self
            .client
            .get(self.url(path))
            .header(TOKEN_HEADER, &self.token)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        let resp = self
            .client
            .post(self.url(path))
            .header(TOKEN_HEADER, &self.token)
            .json(&body)
            .send()
            .await
            .unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap_or(Value::Null))
    }
}

#[tokio::test]
async fn requests_need_a_valid_token() {
    let d = Deployment::start(&[1], 0.0, 0.0).await;
    let api = Api::new(&d).await;
    let bare = api.client.get(api.url("/resources")).send().await.unwrap();
    assert_eq!(bare.status(), StatusCode::UNAUTHORIZED);
    let wrong = api
        .client
        .get(api.url("/resources"))
        .header(TOKEN_HEADER, "forged")
        .send()
        .await
        .unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    assert_eq!(api.get("/resources").await.0, StatusCode::OK);

    d.portal.set_credential(expired_credential());
    assert_eq!(api.get("/resources").await.0, StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn resources_and_active_sets() {
    let d = Deployment::start(&[2, 1], 0.0, 0.0).await;
    let api = Api::new(&d).await;
    let (status, list) = api.get("/resources").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 2);

    assert_eq!(
        api.post("/resources/site-01/probe", json!({})).await.0,
        StatusCode::OK
    );
    assert_eq!(
        api.post("/resources/nope/probe", json!({})).await.0,
        StatusCode::NOT_FOUND
    );

    let mut dead = list[0].clone();
    dead["site_id"] = json!("dead");
    dead["jobmanager_contact"] = json!("127.0.0.1:1/jobmanager-batch");
    dead["fileserver_contact"] = json!("127.0.0.1:1");
    assert_eq!(api.post("/resources", dead).await.0, StatusCode::CREATED);
    let (status, report) = api.post("/resources/dead/probe", json!({})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(report["jobmanager_ok"], false);

    let mut invalid = list[0].clone();
    invalid["cpu_count"] = json!(0);
    assert_eq!(
        api.post("/resources", invalid).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );

    let (status, _) = api
        .post(
            "/active-sets",
            json!({"name": "pair", "site_ids": ["site-02", "site-01"]}),
        )
        .await;
    assert_eq!(status, StatusCode::CREATED);
    let (_, sets) = api.get("/active-sets").await;
    assert!(sets.as_array().unwrap().iter().any(|s| s["name"] == "pair"));
    let (status, _) = api
        .post(
            "/active-sets",
            json!({"name": "bad", "site_ids": ["ghost"]}),
        )
        .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn jobset_lifecycle_over_http() {
    let d = Deployment::start(&[2, 2], 0.0, 0.0).await;
    let api = Api::new(&d).await;
    let spec = serde_json::to_value(d.spec(4, 20)).unwrap();

    let (status, created) = api.post("/jobsets", spec.clone()).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = created["jobset_id"].as_str().unwrap().to_string();

    let (status, entry) = api.get(&format!("/jobsets/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let mut expected = spec.clone();
    expected["jobset_id"] = json!(id);
    assert_eq!(entry["spec"], expected);
    assert_eq!(entry["job_ids"].as_array().unwrap().len(), 4);

    assert!(wait_terminal(&d.portal, &id, Duration::from_secs(30)).await);
    let (_, jobs) = api.get(&format!("/jobs?jobset={id}")).await;
    let jobs = jobs.as_array().unwrap();
    assert_eq!(jobs.len(), 4);
    assert!(jobs.iter().all(|j| j["state"] == "DONE"));

    let (status, cancelled) = api.post("/jobs/cancel", json!({"jobset": id})).await;
    assert_eq!(status, StatusCode::OK);
    assert!(cancelled
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s["state"] == "DONE"));
    let (status, polled) = api
        .post(
            "/jobs/poll",
            json!({"job_ids": [format!("{id}.0"), "ghost.1"]}),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(polled[0]["state"], "DONE");
    assert!(polled[1]["error"].is_string());

    let (status, summary) = api.get(&format!("/jobsets/{id}/summary")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["jobs_done"], 4);
    let total: u64 = summary["histogram"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_u64().unwrap())
        .sum();
    assert_eq!(total, 80);

    let (status, replicas) = api
        .get(&format!("/replicas?name={id}/0/summary.json"))
        .await;
    assert_eq!(status, StatusCode::OK);
    let uri = replicas[0]["physical"][0].as_str().unwrap().to_string();
    let body = api
        .client
        .get(reqwest::Url::parse_with_params(&api.url("/files"), &[("uri", uri.as_str())]).unwrap())
        .header(TOKEN_HEADER, &api.token)
        .send()
        .await
        .unwrap();
    assert_eq!(body.status(), StatusCode::OK);
    let parsed: Value = serde_json::from_slice(&body.bytes().await.unwrap()).unwrap();
    assert_eq!(parsed["events"], 20);
    let (status, _) = api.get("/files?uri=file:///etc/passwd").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, listed) = api.get(&format!("/replicas?prefix={id}/")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(listed.as_array().unwrap().len(), 8);

    let (status, resub) = api
        .post(&format!("/jobsets/{id}/resubmit"), json!({}))
        .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    assert_ne!(resub["jobset_id"], json!(id));
    let (_, all) = api.get("/jobsets").await;
    assert_eq!(all.as_array().unwrap().len(), 2);
    d.portal
        .wait_submitted(resub["jobset_id"].as_str().unwrap())
        .await;
}

#[tokio::test]
async fn error_statuses() {
    let d = Deployment::start(&[1], 0.0, 0.0).await;
    let api = Api::new(&d).await;
    let mut spec = serde_json::to_value(d.spec(1, 1)).unwrap();
    spec["job_count"] = json!(0);
    assert_eq!(
        api.post("/jobsets", spec.clone()).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    spec["job_count"] = json!(1);
    spec["active_set"] = json!("missing");
    assert_eq!(
        api.post("/jobsets", spec.clone()).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    spec["active_set"] = json!("all");
    spec["jobset_id"] = json!("mine");
    assert_eq!(
        api.post("/jobsets", spec.clone()).await.0,
        StatusCode::ACCEPTED
    );
    assert_eq!(
        api.post("/jobsets", spec.clone()).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );
    spec["results_base"] = json!("not a uri");
    assert_eq!(
        api.post("/jobsets", spec).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );

    assert_eq!(api.get("/jobsets/ghost").await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        api.get("/jobsets/ghost/summary").await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(api.get("/jobs?jobset=ghost").await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        api.post("/jobsets/ghost/resubmit", json!({})).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        api.get("/replicas?name=ghost").await.0,
        StatusCode::NOT_FOUND
    );
    d.portal.wait_submitted("mine").await;
}

#[tokio::test]
async fn static_ui_is_served_without_token() {
    let dir = tempfile::tempdir().unwrap();
    let ui = dir.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>portal</html>").unwrap();
    let fabric = Fabric::start(batch_sites(&dir.path().join("sites"), &[1], 0.0, 0.0))
        .await
        .unwrap();
    let mut config = PortalConfig::in_dir(&dir.path().join("portal"));
    config.ui_dir = Some(ui);
    let portal = Portal::start(config, credential(), PortalOptions::default())
        .await
        .unwrap();
    common::register(&portal, fabric.resource_records());
    let running = serve_portal(portal, "127.0.0.1:0").await.unwrap();
    let body = reqwest::get(format!("{}/ui/", running.url()))
        .await
        .unwrap();
    assert_eq!(body.status(), StatusCode::OK);
    assert!(body.text().await.unwrap().contains("portal"));
    let api = reqwest::get(format!("{}/jobsets", running.url()))
        .await
        .unwrap();
    assert_eq!(api.status(), StatusCode::UNAUTHORIZED);
}

#[tokio::test]
async fn state_survives_restart() {
    let d = Deployment::start(&[2], 0.0, 0.0).await;
    let id = d.portal.submit_jobset(d.spec(2, 5)).unwrap();
    assert!(wait_terminal(&d.portal, &id, Duration::from_secs(30)).await);
    let before = d.portal.entry(&id).unwrap();
    let jobs = d.portal.jobs().for_jobset(&id);
    let config = d.portal.config().clone();
    let reopened = Portal::start(config, credential(), PortalOptions::default())
        .await
        .unwrap();
    assert_eq!(reopened.entry(&id).unwrap(), before);
    assert_eq!(reopened.jobs().for_jobset(&id), jobs);
    assert_eq!(
        reopened.registry().resources(),
        d.portal.registry().resources()
    );
    assert_eq!(reopened.catalog().len(), d.portal.catalog().len());
    let summary = reopened.monitor().update_summary(&id).await.unwrap();
    assert_eq!(summary.jobs_done, 2);
}
