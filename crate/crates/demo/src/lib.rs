//! Browser bindings. Values cross the boundary as JSON strings or `Float64Array`s.

mod session;

pub use session::{demo_spec, smooth_preview, DemoSession, SessionOptions};

use wasm_bindgen::prelude::*;
use wsal_core::inference::InferenceConfig;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Session(DemoSession);

#[wasm_bindgen]
impl Session {
    /// `options` is a JSON object; missing fields take their defaults.
    #[wasm_bindgen(constructor)]
    pub fn new(options: &str) -> Result<Session, JsError> {
        let options: SessionOptions = if options.trim().is_empty() {
            SessionOptions::default()
        } else {
            serde_json::from_str(options).map_err(js_err)?
        };
        DemoSession::train(&options).map(Session).map_err(js_err)
    }

    #[wasm_bindgen(js_name = numVideos)]
    pub fn num_videos(&self) -> usize {
        self.0.num_videos()
    }

    #[wasm_bindgen(js_name = lossCurves)]
    pub fn loss_curves(&self) -> String {
        let (rgb, flow) = self.0.loss_curves();
        serde_json::json!({ "rgb": rgb, "flow": flow }).to_string()
    }

    pub fn view(&self, index: usize) -> Result<String, JsError> {
        let v = self.0.view(index).map_err(js_err)?;
        serde_json::to_string(&v).map_err(js_err)
    }

    pub fn detect(&self, index: usize, class_threshold: f64, theta: f64, nms_iou: f64) -> Result<String, JsError> {
        let config = InferenceConfig {
            class_prob_threshold: class_threshold,
            theta,
            nms_iou,
            ..InferenceConfig::default()
        };
        let d = self.0.detect(index, &config).map_err(js_err)?;
        serde_json::to_string(&d).map_err(js_err)
    }
}

#[wasm_bindgen]
pub fn smooth(values: &[f64], sigma: f64) -> Result<Vec<f64>, JsError> {
    smooth_preview(values, sigma).map_err(js_err)
}
