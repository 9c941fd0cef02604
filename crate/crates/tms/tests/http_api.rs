//! End-to-end tests of the twin HTTP API over a real socket.

use serde_json::{json, Value};
use tms::model::{NodeId, Source};
use tms::twin::{self, SigSource, SignatureValue, TwinId, TwinStore};

async fn spawn_api(store: TwinStore) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move {
        axum::serve(listener, twin::http::router(store)).await.unwrap();
    });
    format!("http://{addr}")
}

fn node() -> NodeId {
    NodeId::from_u128(0x51).unwrap()
}

fn twin_id() -> TwinId {
    TwinId::new("siteA", node()).unwrap()
}

#[tokio::test]
async fn put_get_patch_round_trip() {
    let base = spawn_api(TwinStore::in_memory()).await;
    let client = reqwest::Client::new();
    let url = format!("{base}/twins/siteA/{}", node());

    // unknown twin is a 404 with a JSON error body
    let resp = client.get(&url).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "not_found");

    // create
    let resp = client
        .put(&url)
        .json(&json!({
            "attributes": { "location": "5th and main" },
            "features": { "traffic": { "properties": { "count": 0 } } }
        }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["revision"], 1);

    // replace bumps the revision
    let resp = client
        .put(&url)
        .json(&json!({ "attributes": { "location": "6th and main" } }))
        .send()
        .await
        .unwrap();
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["revision"], 2);

    // patch one leaf
    let resp = client
        .patch(format!("{url}/properties/features/traffic/properties/count"))
        .json(&json!(17))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["revision"], 3);

    // and read it back
    let doc: Value = client.get(&url).send().await.unwrap().json().await.unwrap();
    assert_eq!(doc["revision"], 3);
    assert_eq!(doc["features"]["traffic"]["properties"]["count"], 17);
    assert_eq!(doc["attributes"]["location"], "6th and main");

    // list
    let ids: Vec<String> = client
        .get(format!("{base}/twins"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(ids, vec![format!("siteA/{}", node())]);
}

#[tokio::test]
async fn error_statuses() {
    let base = spawn_api(TwinStore::in_memory()).await;
    let client = reqwest::Client::new();
    let url = format!("{base}/twins/siteA/{}", node());

    // patch before create: 404
    let resp = client
        .patch(format!("{url}/properties/features/a/properties/b"))
        .json(&json!(1))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);

    client
        .put(&url)
        .json(&json!({}))
        .send()
        .await
        .unwrap()
        .error_for_status()
        .unwrap();

    // malformed path: 400
    let resp = client
        .patch(format!("{url}/properties/features/a/б")) // not under properties
        .json(&json!(1))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);

    // depth 9: 400
    let resp = client
        .patch(format!(
            "{url}/properties/features/f/properties/a/b/c/d/e/f"
        ))
        .json(&json!(1))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
    let body: Value = resp.json().await.unwrap();
    assert!(body["message"].as_str().unwrap().contains("depth"));

    // non-scalar leaf: 400
    let resp = client
        .patch(format!("{url}/properties/features/f/properties/x"))
        .json(&json!([1, 2, 3]))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);

    // body twin_id conflicting with the URL: 409
    let resp = client
        .put(&url)
        .json(&json!({
            "twin_id": format!("siteB/{}", node()),
            "attributes": {}
        }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 409);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["code"], "id_mismatch");

    // bad node id in the URL: 400
    let resp = client
        .get(format!("{base}/twins/siteA/nothex"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);
}

#[tokio::test]
async fn signature_selection_over_http() {
    let store = TwinStore::in_memory();
    let id = twin_id();
    // older high-quality noise, newer low-quality noise, plus co2
    store
        .append_signature(
            &id,
            SigSource::Telemetry(Source::NoiseDb),
            SignatureValue::Scalar(58.0),
            1_000,
            0.95,
        )
        .unwrap();
    store
        .append_signature(
            &id,
            SigSource::Telemetry(Source::NoiseDb),
            SignatureValue::Scalar(71.0),
            9_000,
            0.4,
        )
        .unwrap();
    store
        .append_signature(
            &id,
            SigSource::Telemetry(Source::Co2Ppm),
            SignatureValue::Scalar(430.0),
            5_000,
            0.9,
        )
        .unwrap();

    let base = spawn_api(store).await;
    let client = reqwest::Client::new();
    let url = format!("{base}/twins/siteA/{}/signatures", node());

    // pure recency over noise only
    let records: Vec<Value> = client
        .get(format!("{url}?from=0&to=10000&sources=noise_db&wr=1.0&limit=10"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["sequence"], 2);
    assert_eq!(records[0]["source"], "noise_db");
    assert_eq!(records[0]["value"], json!({ "scalar": 71.0 }));

    // quality floor keeps only the good ones
    let records: Vec<Value> = client
        .get(format!("{url}?from=0&to=10000&min_quality=0.8&wr=0"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["sequence"], 1, "quality 0.95 ranks first at wr=0");

    // unknown source name: 400
    let resp = client
        .get(format!("{url}?sources=radon"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 400);

    // unknown twin: empty selection, not an error
    let other = format!(
        "{base}/twins/siteB/{}/signatures?from=0&to=10",
        NodeId::from_u128(0x99).unwrap()
    );
    let records: Vec<Value> = client
        .get(other)
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert!(records.is_empty());
}
