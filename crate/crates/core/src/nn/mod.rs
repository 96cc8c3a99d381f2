//! Fake-quantization layers, networks and the training loop.

mod clip;
mod data;
mod fake_quant;
mod idx;
mod layer;
mod network;
mod trace;
mod train;

pub use clip::{init_clipping, ClipPolicy, ClipTracker};
pub use data::{gaussian_blobs, two_moons, Dataset};
pub use fake_quant::{
    backward_with_rule, fake_quant_backward, fake_quant_forward, fake_quant_forward_mode,
    ste_baseline_backward, ste_baseline_forward, FakeQuantGrads, ForwardMode, GradientRule,
    SavedContext,
};
pub use idx::{encode_idx_u8, load_idx_dataset, parse_idx, read_idx, IdxArray, IdxType};
pub use layer::{
    layer_forward, Activation, LayerGrads, LayerKind, QuantPass, QuantScalarGrads, QuantizedLayer,
};
pub use network::{BatchResult, Network, QuantSite};
pub use trace::{TrainRecord, TrainTrace, TRACE_HEADER};
pub use train::{evaluate, train, Method, TrainConfig};
