use serde::{Deserialize, Serialize};

use super::made::{DoubtFlow, Standardizer, LOG_SCALE_CLAMP};
use super::{FeatureSchema, FlowError, EVENT_DIM};

/// Format identifier written into every flow file.
pub const FLOW_FORMAT: &str = "ruleflight-doubt-flow/1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowFile {
    format: String,
    event_dim: usize,
    permutation: String,
    hidden_activation: String,
    log_scale_clamp: f64,
    conditioning: Conditioning,
    standardizer: Standardizer,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Conditioning {
    /// Ordered components of the conditioning vector.
    layout: Vec<String>,
    features: FeatureSchema,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    hidden_degrees: Vec<usize>,
    /// hidden × event_dim, row-major
    input_mask: Vec<u8>,
    /// (2 · event_dim) × hidden, row-major; rows are shifts then log-scales
    output_mask: Vec<u8>,
    w_input: Vec<f64>,
    w_conditioning: Vec<f64>,
    b_hidden: Vec<f64>,
    w_output: Vec<f64>,
    b_output: Vec<f64>,
}

fn layout(schema: &FeatureSchema) -> Vec<String> {
    let mut out: Vec<String> = schema
        .categories
        .iter()
        .map(|c| format!("{}={c}", schema.categorical_name))
        .collect();
    out.extend(["velocity".to_string(), "sin(heading)".to_string(), "cos(heading)".to_string()]);
    out
}

impl DoubtFlow {
    pub fn to_json(&self) -> String {
        let shape = self.shape();
        let h = self.hidden;
        let layers = (0..self.layers)
            .map(|l| {
                let p = self.layer(l);
                LayerFile {
                    hidden_degrees: (0..h).map(|u| shape.degree(u)).collect(),
                    input_mask: (0..h)
                        .flat_map(|u| (0..EVENT_DIM).map(move |j| u8::from(shape.input_mask(u, j))))
                        .collect(),
                    output_mask: (0..2 * EVENT_DIM)
                        .flat_map(|o| (0..h).map(move |u| u8::from(shape.output_mask(o, u))))
                        .collect(),
                    w_input: p[shape.w_x()..shape.w_c()].to_vec(),
                    w_conditioning: p[shape.w_c()..shape.b_h()].to_vec(),
                    b_hidden: p[shape.b_h()..shape.w_o()].to_vec(),
                    w_output: p[shape.w_o()..shape.b_o()].to_vec(),
                    b_output: p[shape.b_o()..shape.per_layer()].to_vec(),
                }
            })
            .collect();
        let file = FlowFile {
            format: FLOW_FORMAT.to_string(),
            event_dim: EVENT_DIM,
            permutation: "reverse".into(),
            hidden_activation: "tanh".into(),
            log_scale_clamp: LOG_SCALE_CLAMP,
            conditioning: Conditioning {
                layout: layout(&self.schema),
                features: self.schema.clone(),
            },
            standardizer: self.standardizer,
            layers,
        };
        serde_json::to_string(&file).expect("flow serializes")
    }

    pub fn from_json(text: &str) -> Result<DoubtFlow, FlowError> {
        let file: FlowFile = serde_json::from_str(text).map_err(|e| FlowError::Format(e.to_string()))?;
        if file.format != FLOW_FORMAT {
            return Err(FlowError::Format(format!("unsupported format `{}`", file.format)));
        }
        if file.event_dim != EVENT_DIM
            || file.permutation != "reverse"
            || file.hidden_activation != "tanh"
            || file.log_scale_clamp != LOG_SCALE_CLAMP
        {
            return Err(FlowError::Format("unsupported flow topology".into()));
        }
        if file.conditioning.layout != layout(&file.conditioning.features) {
            return Err(FlowError::Format("conditioning layout does not match the feature schema".into()));
        }
        let hidden = file.layers.first().map(|l| l.hidden_degrees.len()).unwrap_or(0);
        let mut flow = DoubtFlow {
            schema: file.conditioning.features,
            layers: file.layers.len(),
            hidden,
            standardizer: file.standardizer,
            params: Vec::new(),
        };
        let shape = flow.shape();
        for (l, layer) in file.layers.iter().enumerate() {
            let degrees: Vec<usize> = (0..hidden).map(|u| shape.degree(u)).collect();
            let input_mask: Vec<u8> = (0..hidden)
                .flat_map(|u| (0..EVENT_DIM).map(move |j| u8::from(shape.input_mask(u, j))))
                .collect();
            let output_mask: Vec<u8> = (0..2 * EVENT_DIM)
                .flat_map(|o| (0..hidden).map(move |u| u8::from(shape.output_mask(o, u))))
                .collect();
            if layer.hidden_degrees != degrees || layer.input_mask != input_mask || layer.output_mask != output_mask {
                return Err(FlowError::Format(format!("layer {l}: unsupported mask layout")));
            }
            let sizes = [
                (layer.w_input.len(), hidden * EVENT_DIM),
                (layer.w_conditioning.len(), hidden * shape.c),
                (layer.b_hidden.len(), hidden),
                (layer.w_output.len(), 2 * EVENT_DIM * hidden),
                (layer.b_output.len(), 2 * EVENT_DIM),
            ];
            if sizes.iter().any(|(a, b)| a != b) {
                return Err(FlowError::Format(format!("layer {l}: weight block size mismatch")));
            }
            for block in [
                &layer.w_input,
                &layer.w_conditioning,
                &layer.b_hidden,
                &layer.w_output,
                &layer.b_output,
            ] {
                flow.params.extend_from_slice(block);
            }
        }
        flow.validate()?;
        Ok(flow)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn content_hash(&self) -> String {
        crate::hash::sha256_hex(self.to_json().as_bytes())
    }
}
