mod common;

use std::sync::{Arc, Mutex};

use common::Stub;
use sha2::{Digest, Sha256};
use vlnmem::agent::{compose_output, AgentError, RemoteDecomposer, Decomposer, RemotePolicy};
use vlnmem::geometry::{CameraPose, Frame, Image, Intrinsics, PointCloud};
use vlnmem::runner::{CameraConfig, Runner, RunnerConfig};
use vlnmem::simulator::{generate_world, ActionType, GenConfig, SceneClass};
use vlnmem::sum::{reconstruct, Backend, MemoryBank, MemorySelection, Reconstruction, ReconstructorConfig, SumError};

fn frames() -> Vec<Frame> {
    let k = Intrinsics::from_hfov(8, 4, std::f64::consts::FRAC_PI_2).unwrap();
    (0..3)
        .map(|i| Frame {
            step_index: i * 5,
            image: Image::filled(8, 4, [40, 90, 10]),
            depth: None,
            pose: Some(CameraPose::new([i as f64, 0.0, 0.38], 0.0, 0.0)),
            intrinsics: k,
        })
        .collect()
}

fn one_point_glb() -> Vec<u8> {
    let mut cloud = PointCloud::new();
    cloud.push([1.5, -2.0, 0.25], [7, 8, 9]);
    Reconstruction { cloud, ..Default::default() }.to_glb()
}

fn external_cfg(url: &str) -> ReconstructorConfig {
    ReconstructorConfig { backend: Backend::External, external_endpoint: Some(url.to_string()), ..Default::default() }
}

#[test]
fn external_backend_returns_the_stub_cloud() {
    let glb = one_point_glb();
    let seen = Arc::new(Mutex::new(None));
    let s = seen.clone();
    let stub = Stub::serve(move |path, body| {
        *s.lock().unwrap() = Some((path.to_string(), serde_json::from_slice::<serde_json::Value>(body).unwrap()));
        (200, glb.clone())
    });
    let r = reconstruct(&frames(), &external_cfg(&stub.url)).unwrap();
    assert_eq!(r.cloud.points, vec![[1.5, -2.0, 0.25]]);
    assert_eq!(r.cloud.colors, vec![[7, 8, 9]]);
    assert_eq!(r.digest(), vlnmem::sum::sha256_hex(&one_point_glb()));
    let (path, body) = seen.lock().unwrap().clone().unwrap();
    assert_eq!(path, "/reconstruct");
    let sent = body["frames"].as_array().unwrap();
    assert_eq!(sent.len(), 3);
    assert!(sent[0]["image"].as_str().unwrap().len() > 10);
    assert_eq!(sent[1]["pose"][0], 1.0);
}

#[test]
fn external_backend_errors() {
    let stub = Stub::serve(|_, _| (200, b"not a glb at all".to_vec()));
    assert!(matches!(reconstruct(&frames(), &external_cfg(&stub.url)), Err(SumError::MalformedGlb(_))));
    let stub = Stub::serve(|_, _| (503, Vec::new()));
    assert!(matches!(reconstruct(&frames(), &external_cfg(&stub.url)), Err(SumError::BackendUnreachable(_))));
    let url = {
        let gone = Stub::serve(|_, _| (200, Vec::new()));
        gone.url.clone()
    };
    assert!(matches!(reconstruct(&frames(), &external_cfg(&url)), Err(SumError::BackendUnreachable(_))));
}

#[test]
fn remote_policy_retries_once_then_fails() {
    let stub = Stub::serve(|_, _| (500, Vec::new()));
    let req = vlnmem::agent::ModelRequest { system: "s".into(), parts: vec![] };
    assert!(matches!(RemotePolicy::new(&stub.url).call(&req), Err(AgentError::EndpointUnreachable(_))));
    assert_eq!(stub.hits(), 2);

    let stub = Stub::serve(|_, _| (200, br#"{"text": "   "}"#.to_vec()));
    assert!(matches!(RemotePolicy::new(&stub.url).call(&req), Err(AgentError::ModelRefusal(_))));
}

#[test]
fn remote_decomposer_reads_subtask_tags() {
    let stub = Stub::serve(|_, _| {
        (200, serde_json::to_vec(&serde_json::json!({"text": "<subtask>walk to the barn</subtask> <subtask>stop at the gate</subtask>"})).unwrap())
    });
    let list = RemoteDecomposer::new(&stub.url).decompose("walk to the barn then stop at the gate").unwrap();
    assert_eq!(list.subtasks(), ["walk to the barn", "stop at the gate"]);
}

/// Replies from a hash of the last attached image (the current frame), ignoring the rest.
fn frame_driven_stub(image_counts: Arc<Mutex<Vec<usize>>>) -> Stub {
    Stub::serve(move |_, body| {
        let v: serde_json::Value = serde_json::from_slice(body).unwrap();
        let images: Vec<&str> =
            v["parts"].as_array().unwrap().iter().filter(|p| p["type"] == "image").map(|p| p["data"].as_str().unwrap()).collect();
        image_counts.lock().unwrap().push(images.len());
        let d = Sha256::digest(images.last().unwrap().as_bytes());
        let action = [ActionType::Forward, ActionType::Forward, ActionType::LeftRotate, ActionType::RightRotate][d[0] as usize % 4];
        (200, serde_json::to_vec(&serde_json::json!({"text": compose_output("", "", "", action)})).unwrap())
    })
}

#[test]
fn memory_pathway_only_changes_attachments() {
    let (world, episodes) = generate_world(2, SceneClass::Garden, &GenConfig { episodes: 3, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bank = MemoryBank::new(dir.path());
    let base = RunnerConfig {
        camera: CameraConfig { width: 24, height: 14, hfov_deg: 90.0 },
        deviation_enabled: false,
        max_steps: 12,
        history_window: 2,
        ..Default::default()
    };
    Runner::new(base.clone(), Some(bank.clone())).unwrap().pre_explore(&world, &episodes[0]).unwrap();

    let mut runs = Vec::new();
    for sel in [MemorySelection::None, MemorySelection::Oblique, MemorySelection::Hybrid] {
        let counts = Arc::new(Mutex::new(Vec::new()));
        let stub = frame_driven_stub(counts.clone());
        let runner = Runner::new(RunnerConfig { memory_selection: sel, ..base.clone() }, Some(bank.clone())).unwrap();
        let r = runner.run_episode(&world, &episodes[0], &mut RemotePolicy::new(&stub.url)).unwrap();
        assert_eq!(r.memory_hit, sel != MemorySelection::None);
        let counts = counts.lock().unwrap().clone();
        // frames ramp up to the history window, memory images come on top
        for (t, c) in counts.iter().enumerate() {
            assert_eq!(*c, sel.image_count() + (t + 1).min(2), "{sel} step {t}");
        }
        runs.push(r);
    }
    assert_eq!(runs[0].trajectory, runs[1].trajectory);
    assert_eq!(runs[0].trajectory, runs[2].trajectory);
    assert!(runs[0].trajectory.len() > 2);
}
