//! Validated, ready-to-run form of a decoded model.

use std::collections::{HashMap, HashSet};

use crate::ops;
use crate::proto::{Dim, Model, Node, ValueInfo};
use crate::tensor::Tensor;
use crate::{OnnxError, Result};

#[derive(Debug)]
pub(crate) struct Program {
    nodes: Vec<Node>,
    initializers: HashMap<String, Tensor>,
    pub input: ValueInfo,
    pub output: ValueInfo,
    opset: i64,
}

impl Program {
    /// Checks operator support, topological order and the single
    /// input/output contract before anything runs.
    pub fn new(model: Model) -> Result<Self> {
        let g = model.graph;
        let initializers: HashMap<String, Tensor> = g.initializers.into_iter().collect();
        // Older exporters also list initializers as graph inputs.
        let mut inputs = g.inputs.into_iter().filter(|i| !initializers.contains_key(&i.name));
        let input = inputs.next().ok_or_else(|| OnnxError::Decode("graph has no runtime input".into()))?;
        if inputs.next().is_some() {
            return Err(OnnxError::Unsupported("graphs with more than one runtime input".into()));
        }
        let output = g
            .outputs
            .into_iter()
            .next()
            .ok_or_else(|| OnnxError::Decode("graph has no output".into()))?;

        let mut defined: HashSet<&str> = initializers.keys().map(String::as_str).collect();
        defined.insert(&input.name);
        for node in &g.nodes {
            let label = if node.name.is_empty() { &node.op_type } else { &node.name };
            if !(node.domain.is_empty() || node.domain == "ai.onnx") {
                return Err(OnnxError::Unsupported(format!("{label} uses operator domain {:?}", node.domain)));
            }
            if !ops::SUPPORTED.contains(&node.op_type.as_str()) {
                return Err(OnnxError::Unsupported(format!("operator {} ({label})", node.op_type)));
            }
            if let Some(missing) = node.inputs.iter().find(|i| !i.is_empty() && !defined.contains(i.as_str())) {
                return Err(OnnxError::Decode(format!("{label} reads {missing:?} before it is produced")));
            }
            defined.extend(node.outputs.iter().map(String::as_str));
        }
        if !defined.contains(output.name.as_str()) {
            return Err(OnnxError::Decode(format!("graph output {:?} is never produced", output.name)));
        }
        Ok(Self {
            nodes: g.nodes,
            initializers,
            input,
            output,
            opset: model.opset,
        })
    }

    /// Declared input dims, with symbolic or unknown dims as `None`.
    pub fn input_dims(&self) -> Option<Vec<Option<usize>>> {
        dims(&self.input)
    }

    pub fn output_dims(&self) -> Option<Vec<Option<usize>>> {
        dims(&self.output)
    }

    pub fn run(&self, input: Tensor) -> Result<Tensor> {
        let mut values: HashMap<&str, Tensor> = HashMap::new();
        values.insert(&self.input.name, input);
        for node in &self.nodes {
            let args: Vec<Option<&Tensor>> = node
                .inputs
                .iter()
                .map(|name| match name.as_str() {
                    "" => None,
                    name => values.get(name).or_else(|| self.initializers.get(name)),
                })
                .collect();
            let outputs = ops::run(node, &args, self.opset).map_err(|e| {
                let label = if node.name.is_empty() { &node.op_type } else { &node.name };
                OnnxError::Runtime(format!("{label}: {e}"))
            })?;
            for (name, value) in node.outputs.iter().zip(outputs) {
                if !name.is_empty() {
                    values.insert(name, value);
                }
            }
        }
        values
            .remove(self.output.name.as_str())
            .or_else(|| self.initializers.get(&self.output.name).cloned())
            .ok_or_else(|| OnnxError::Runtime(format!("output {:?} was not produced", self.output.name)))
    }
}

fn dims(info: &ValueInfo) -> Option<Vec<Option<usize>>> {
    info.shape.as_ref().map(|shape| {
        shape
            .iter()
            .map(|d| match d {
                Dim::Value(v) if *v > 0 => Some(*v as usize),
                _ => None,
            })
            .collect()
    })
}
