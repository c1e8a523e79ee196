//! Interactive pieces of the simulator for the browser: an MMD explorer on
//! two 2-D point clouds, a preview of the per-device preprocessing, and a
//! federation that advances one round per call.
//!
//! The plain Rust API lives in the submodules and is what the tests use; the
//! `#[wasm_bindgen]` wrappers below hand JSON strings to the page.

mod demo;
mod explorer;
mod preview;

pub use demo::{DemoConfig, DemoRound, EmbeddingView, FederationRunner};
pub use explorer::{explore_mmd, MmdExploration};
pub use preview::{preview_event, PreprocessPreview};

use wasm_bindgen::prelude::*;

fn js(e: hhhfl::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn to_json(v: &impl serde::Serialize) -> String {
    serde_json::to_string(v).expect("views are plain data")
}

/// Two Gaussian clouds and their MMD². `bandwidth <= 0` picks the median heuristic.
#[wasm_bindgen(js_name = exploreMmd)]
pub fn explore_mmd_js(n: usize, shift: f64, spread: f64, bandwidth: f64, seed: u32) -> Result<String, JsError> {
    let bw = (bandwidth > 0.0).then_some(bandwidth);
    explore_mmd(n, shift, spread, bw, seed as u64).map(|v| to_json(&v)).map_err(js)
}

/// A synthetic raw recording for `device` and the feature vector it becomes.
#[wasm_bindgen(js_name = previewEvent)]
pub fn preview_event_js(device: &str, code: i8, seed: u32) -> Result<String, JsError> {
    preview_event(device, code, seed as u64).map(|v| to_json(&v)).map_err(js)
}

#[wasm_bindgen]
pub struct FederationDemo(FederationRunner);

#[wasm_bindgen]
impl FederationDemo {
    /// `config` is a JSON object with any of the `DemoConfig` fields.
    #[wasm_bindgen(constructor)]
    pub fn new(config: &str) -> Result<FederationDemo, JsError> {
        let config: DemoConfig =
            serde_json::from_str(config).map_err(|e| JsError::new(&format!("demo config: {e}")))?;
        FederationRunner::new(&config).map(FederationDemo).map_err(js)
    }

    pub fn step(&mut self) -> Result<String, JsError> {
        self.0.step().map(|r| to_json(&r)).map_err(js)
    }

    #[wasm_bindgen(js_name = isDone)]
    pub fn is_done(&self) -> bool {
        self.0.is_done()
    }

    /// Test-set embeddings in the plane of their two principal axes.
    pub fn embeddings(&self) -> Result<String, JsError> {
        self.0.embeddings().map(|v| to_json(&v)).map_err(js)
    }
}
