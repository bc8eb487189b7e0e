//! Equivariant message-passing networks and their parameter stores.

pub mod layer;
pub mod models;
pub mod params;

pub use layer::{Dropout, StateVars, Topology};
pub use models::{
    fabind_layer_forward, graph_inputs, initial_state, ligand_dock_forward, model_forward, pocket_center_var,
    pocket_dock_forward, pocket_predict, select_residues, LayerState, ModelInputs, ModelOutputs, PocketConfig,
};
pub use params::{BoundParams, CoordInit, GradMap, LayerPlan, ModelKind, ModelParams, ModelShape};
