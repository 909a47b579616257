//! The subset of the ONNX message schema the interpreter reads.

use crate::tensor::Tensor;
use crate::wire::{Fields, Value};
use crate::{OnnxError, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Dim {
    Value(i64),
    Param(String),
    Unknown,
}

#[derive(Debug, Clone)]
pub(crate) struct ValueInfo {
    pub name: String,
    pub elem_type: Option<i32>,
    /// `None` when the shape is not declared at all.
    pub shape: Option<Vec<Dim>>,
}

#[derive(Debug, Clone)]
pub(crate) enum Attribute {
    Float(f32),
    Int(i64),
    String(String),
    Tensor(Tensor),
    Floats(Vec<f32>),
    Ints(Vec<i64>),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub name: String,
    pub op_type: String,
    pub domain: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub attributes: Vec<(String, Attribute)>,
}

#[derive(Debug, Clone)]
pub(crate) struct Graph {
    pub nodes: Vec<Node>,
    pub initializers: Vec<(String, Tensor)>,
    pub inputs: Vec<ValueInfo>,
    pub outputs: Vec<ValueInfo>,
}

#[derive(Debug, Clone)]
pub(crate) struct Model {
    pub graph: Graph,
    /// Version of the default operator domain.
    pub opset: i64,
}

pub(crate) fn decode_model(bytes: &[u8]) -> Result<Model> {
    let mut graph = None;
    let mut opset = None;
    for field in Fields::new(bytes) {
        match field? {
            (7, v) => graph = Some(decode_graph(v.bytes("ModelProto.graph")?)?),
            (8, v) => {
                let (domain, version) = decode_opset(v.bytes("ModelProto.opset_import")?)?;
                if domain.is_empty() || domain == "ai.onnx" {
                    opset = Some(version);
                }
            }
            _ => {}
        }
    }
    let graph = graph.ok_or_else(|| OnnxError::Decode("model has no graph".into()))?;
    let opset = opset.ok_or_else(|| OnnxError::Decode("model imports no default opset".into()))?;
    Ok(Model { graph, opset })
}

fn decode_opset(bytes: &[u8]) -> Result<(String, i64)> {
    let mut domain = String::new();
    let mut version = 0;
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => domain = v.string("OperatorSetIdProto.domain")?,
            (2, v) => version = v.varint("OperatorSetIdProto.version")? as i64,
            _ => {}
        }
    }
    Ok((domain, version))
}

fn decode_graph(bytes: &[u8]) -> Result<Graph> {
    let mut g = Graph {
        nodes: Vec::new(),
        initializers: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => g.nodes.push(decode_node(v.bytes("GraphProto.node")?)?),
            (5, v) => g.initializers.push(decode_tensor(v.bytes("GraphProto.initializer")?)?),
            (11, v) => g.inputs.push(decode_value_info(v.bytes("GraphProto.input")?)?),
            (12, v) => g.outputs.push(decode_value_info(v.bytes("GraphProto.output")?)?),
            _ => {}
        }
    }
    Ok(g)
}

fn decode_node(bytes: &[u8]) -> Result<Node> {
    let mut n = Node {
        name: String::new(),
        op_type: String::new(),
        domain: String::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
        attributes: Vec::new(),
    };
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => n.inputs.push(v.string("NodeProto.input")?),
            (2, v) => n.outputs.push(v.string("NodeProto.output")?),
            (3, v) => n.name = v.string("NodeProto.name")?,
            (4, v) => n.op_type = v.string("NodeProto.op_type")?,
            (5, v) => n.attributes.push(decode_attribute(v.bytes("NodeProto.attribute")?)?),
            (7, v) => n.domain = v.string("NodeProto.domain")?,
            _ => {}
        }
    }
    if n.op_type.is_empty() {
        return Err(OnnxError::Decode("node without op_type".into()));
    }
    Ok(n)
}

// AttributeProto.AttributeType values.
const ATTR_FLOAT: u64 = 1;
const ATTR_INT: u64 = 2;
const ATTR_STRING: u64 = 3;
const ATTR_TENSOR: u64 = 4;
const ATTR_FLOATS: u64 = 6;
const ATTR_INTS: u64 = 7;

fn decode_attribute(bytes: &[u8]) -> Result<(String, Attribute)> {
    let mut name = String::new();
    let mut kind = None;
    let (mut f, mut i, mut s, mut t) = (None, None, None, None);
    let (mut floats, mut ints) = (Vec::new(), Vec::new());
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => name = v.string("AttributeProto.name")?,
            (2, v) => f = Some(v.f32("AttributeProto.f")?),
            (3, v) => i = Some(v.varint("AttributeProto.i")? as i64),
            (4, v) => s = Some(v.string("AttributeProto.s")?),
            (5, v) => t = Some(decode_tensor(v.bytes("AttributeProto.t")?)?.1),
            (7, v) => v.push_f32s("AttributeProto.floats", &mut floats)?,
            (8, v) => v.push_varints("AttributeProto.ints", &mut ints)?,
            (20, v) => kind = Some(v.varint("AttributeProto.type")?),
            _ => {}
        }
    }
    let missing = || OnnxError::Decode(format!("attribute {name:?} has no value"));
    let attr = match kind {
        Some(ATTR_FLOAT) => Attribute::Float(f.unwrap_or(0.0)),
        Some(ATTR_INT) => Attribute::Int(i.unwrap_or(0)),
        Some(ATTR_STRING) => Attribute::String(s.unwrap_or_default()),
        Some(ATTR_TENSOR) => Attribute::Tensor(t.ok_or_else(missing)?),
        Some(ATTR_FLOATS) => Attribute::Floats(floats),
        Some(ATTR_INTS) => Attribute::Ints(ints),
        Some(other) => {
            return Err(OnnxError::Unsupported(format!("attribute {name:?} has type {other}")));
        }
        // Very old writers omit the type; infer it from whichever field is set.
        None => match (f, i, s, t) {
            (Some(f), ..) => Attribute::Float(f),
            (_, Some(i), ..) => Attribute::Int(i),
            (_, _, Some(s), _) => Attribute::String(s),
            (.., Some(t)) => Attribute::Tensor(t),
            _ if !floats.is_empty() => Attribute::Floats(floats),
            _ if !ints.is_empty() => Attribute::Ints(ints),
            _ => return Err(missing()),
        },
    };
    Ok((name, attr))
}

// TensorProto.DataType values.
const FLOAT: i32 = 1;
const INT32: i32 = 6;
const INT64: i32 = 7;
const DOUBLE: i32 = 11;

fn decode_tensor(bytes: &[u8]) -> Result<(String, Tensor)> {
    let mut name = String::new();
    let mut dims = Vec::new();
    let mut data_type = 0;
    let mut raw: Option<&[u8]> = None;
    let mut floats = Vec::new();
    let mut ints = Vec::new();
    let mut external = false;
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => v.push_varints("TensorProto.dims", &mut dims)?,
            (2, v) => data_type = v.varint("TensorProto.data_type")? as i32,
            (4, v) => v.push_f32s("TensorProto.float_data", &mut floats)?,
            // int32_data holds zigzag-free varints, like int64_data.
            (5, v) | (7, v) => v.push_varints("TensorProto.int_data", &mut ints)?,
            (8, v) => name = v.string("TensorProto.name")?,
            (9, v) => raw = Some(v.bytes("TensorProto.raw_data")?),
            (10, v) => v.push_f64s("TensorProto.double_data", &mut floats)?,
            (14, v) => external = v.varint("TensorProto.data_location")? == 1,
            _ => {}
        }
    }
    if external {
        return Err(OnnxError::Unsupported(format!("tensor {name:?} stores its data externally")));
    }
    let shape = dims
        .iter()
        .map(|&d| usize::try_from(d).map_err(|_| OnnxError::Decode(format!("tensor {name:?} has dim {d}"))))
        .collect::<Result<Vec<_>>>()?;
    let tensor = match (data_type, raw) {
        (FLOAT, Some(raw)) => Tensor::from_f32(shape, le_chunks::<4>(raw, &name)?.map(f32::from_le_bytes).collect()),
        (DOUBLE, Some(raw)) => {
            Tensor::from_f32(shape, le_chunks::<8>(raw, &name)?.map(|b| f64::from_le_bytes(b) as f32).collect())
        }
        (INT64, Some(raw)) => Tensor::from_i64(shape, le_chunks::<8>(raw, &name)?.map(i64::from_le_bytes).collect()),
        (INT32, Some(raw)) => {
            Tensor::from_i64(shape, le_chunks::<4>(raw, &name)?.map(|b| i64::from(i32::from_le_bytes(b))).collect())
        }
        (FLOAT | DOUBLE, None) => Tensor::from_f32(shape, floats),
        (INT64, None) => Tensor::from_i64(shape, ints),
        // Negative int32 values are sign-extended to 64 bits on the wire.
        (INT32, None) => Tensor::from_i64(shape, ints.into_iter().map(|v| i64::from(v as i32)).collect()),
        (other, _) => return Err(OnnxError::Unsupported(format!("tensor {name:?} has data type {other}"))),
    }
    .map_err(|e| OnnxError::Decode(format!("tensor {name:?}: {e}")))?;
    Ok((name, tensor))
}

fn le_chunks<'a, const N: usize>(raw: &'a [u8], name: &str) -> Result<impl Iterator<Item = [u8; N]> + 'a> {
    if !raw.len().is_multiple_of(N) {
        return Err(OnnxError::Decode(format!("tensor {name:?} raw data length {} is not a multiple of {N}", raw.len())));
    }
    Ok(raw.chunks_exact(N).map(|c| c.try_into().expect("chunk of N bytes")))
}

fn decode_value_info(bytes: &[u8]) -> Result<ValueInfo> {
    let mut info = ValueInfo {
        name: String::new(),
        elem_type: None,
        shape: None,
    };
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => info.name = v.string("ValueInfoProto.name")?,
            (2, v) => {
                for f in Fields::new(v.bytes("ValueInfoProto.type")?) {
                    if let (1, tensor_type) = f? {
                        decode_tensor_type(tensor_type.bytes("TypeProto.tensor_type")?, &mut info)?;
                    }
                }
            }
            _ => {}
        }
    }
    Ok(info)
}

fn decode_tensor_type(bytes: &[u8], info: &mut ValueInfo) -> Result<()> {
    for field in Fields::new(bytes) {
        match field? {
            (1, v) => info.elem_type = Some(v.varint("TypeProto.Tensor.elem_type")? as i32),
            (2, v) => {
                let mut dims = Vec::new();
                for f in Fields::new(v.bytes("TensorShapeProto")?) {
                    if let (1, d) = f? {
                        dims.push(decode_dim(d)?);
                    }
                }
                info.shape = Some(dims);
            }
            _ => {}
        }
    }
    Ok(())
}

fn decode_dim(v: Value<'_>) -> Result<Dim> {
    let mut dim = Dim::Unknown;
    for f in Fields::new(v.bytes("TensorShapeProto.Dimension")?) {
        match f? {
            (1, v) => dim = Dim::Value(v.varint("Dimension.dim_value")? as i64),
            (2, v) => dim = Dim::Param(v.string("Dimension.dim_param")?),
            _ => {}
        }
    }
    Ok(dim)
}
