//! Fixtures and a minimal blocking HTTP client shared by integration tests.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Stdio};

use boxlift::schema::{save_annotations_atomic, AnnotationFile, AnnotationRecord, ImageRecord, Provenance};
use boxlift_core::{Box3D, CameraIntrinsics};
use nalgebra::Vector3;
use serde_json::Value;

/// Two images, three boxes, one rejected object record.
pub fn fixture_doc() -> AnnotationFile {
    let k = CameraIntrinsics::new(500.0, 500.0, 319.5, 239.5, 640, 480).unwrap();
    let boxed = |id: &str, image: &str, c: [f64; 3]| {
        let b = Box3D::axis_aligned(Vector3::from(c), Vector3::new(1.0, 0.8, 1.5)).unwrap();
        AnnotationRecord::with_box(id.into(), image.into(), "chair".into(), &b, 1.0, Provenance::Auto)
    };
    AnnotationFile {
        images: vec![ImageRecord::new("img_a", &k), ImageRecord::new("img_b", &k)],
        annotations: vec![
            boxed("img_a/o0", "img_a", [0.0, 0.5, 6.0]),
            boxed("img_a/o1", "img_a", [2.0, 0.5, 7.0]),
            AnnotationRecord::rejected("img_a/o2".into(), "img_a".into(), "table".into(), "filter:too_small".into()),
            boxed("img_b/o0", "img_b", [-1.0, 0.4, 5.0]),
        ],
        audit: Vec::new(),
    }
}

pub fn write_fixture(path: &Path) -> AnnotationFile {
    let doc = fixture_doc();
    save_annotations_atomic(path, &doc, None).unwrap();
    doc
}

/// One HTTP/1.1 request with `Connection: close`; returns status and JSON body.
pub fn http(addr: &str, method: &str, path: &str, body: Option<&str>) -> (u16, Value) {
    let mut s = TcpStream::connect(addr).unwrap();
    let body = body.unwrap_or("");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let (head, payload) = raw.split_once("\r\n\r\n").unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, serde_json::from_str(payload).unwrap_or(Value::Null))
}

/// Running `boxlift serve` on an ephemeral port.
pub struct Server {
    pub child: Child,
    pub addr: String,
}

impl Server {
    pub fn start(annotations: &Path, scenes: &Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_boxlift"))
            .args(["serve", "--addr", "127.0.0.1:0", "--annotations"])
            .arg(annotations)
            .arg("--scenes")
            .arg(scenes)
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}")).to_string();
        Self { child, addr }
    }

    pub fn stop(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

/// Re-runs the current test binary as a child that executes `child_test`
/// with `env` pointing at `file`; returns whether the child exited cleanly.
pub fn run_crash_child(child_test: &str, env: &str, file: &Path, harness: bool) -> bool {
    let mut cmd = Command::new(std::env::current_exe().unwrap());
    if harness {
        cmd.args(["--exact", child_test, "--ignored", "--nocapture", "--test-threads=1"]);
    }
    cmd.env(env, file).stdout(Stdio::null()).stderr(Stdio::null()).status().unwrap().success()
}
