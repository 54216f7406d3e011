//! Training through the subprocess protocol. The worker here is a shell
//! script that replays a canned response; a real worker would read the
//! request line, train, and write the final state where `state_ref` says.

use std::fs;
use std::sync::Arc;

use seqft::backends::{Backend, BackendError, ExternalBackend, Init, ParameterState, TaskSpec, TrainRequest, TrainerEndpoint};
use seqft::metrics::MetricSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let root = ParameterState::zeros(4);
    root.save(&dir.path().join("final.state"))?;
    let respond = |curve: &str| -> std::io::Result<()> {
        let line = format!(
            r#"{{"curve":{curve},"probe":{{"loss0":1.0,"loss5":0.9,"metric0":1.0,"metric5":0.9}},"state_ref":"final.state"}}"#
        );
        fs::write(dir.path().join("response.json"), line + "\n")
    };
    let endpoint = TrainerEndpoint {
        command: "sh".into(),
        args: vec!["-c".into(), "read request; cat response.json".into()],
        working_dir: dir.path().to_path_buf(),
        timeout_secs: 10.0,
    };
    let backend = ExternalBackend::new(endpoint, root.clone());
    let task = TaskSpec { task_id: "demo".into(), family_id: "f".into(), metric: MetricSpec::loss("loss"), synthetic: None };
    let init = Init { lineage: vec![], state: Arc::new(root) };
    let request = TrainRequest::new("demo", init, 100, vec![0, 5, 10, 100])?;

    respond("[[0,1.0],[5,0.8],[10,0.62],[100,0.31]]")?;
    let result = backend.train(&task, &request, 0)?;
    println!("curve {:?}", result.curve.points());

    respond("[[0,1.0],[5,0.8],[10,NaN],[100,0.31]]")?;
    match backend.train(&task, &request, 0) {
        Err(BackendError::Validation(v)) => println!("rejected: {v}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
