//! The policy contract, the simulated reference policy, and the remote
//! endpoint adapter.

pub mod decision;
pub mod endpoint;
pub mod optimizer;
pub mod params;
pub mod sim;
pub mod world;

pub use decision::Decision;
pub use endpoint::{ChatTransport, EndpointConfig, EndpointPolicy, HttpTransport, RemoteSolution};
pub use optimizer::{apply_gradient, clip_grad_norm, grad_norm, AdamW, Optimizer};
pub use params::{ParamLayout, PolicyParams, LENGTH_FINE, PASS_CHOICES};
pub use sim::{Policy, ScoredSequence, SequenceKind, SimAgent, SimPolicy, SimPolicyConfig, FILLER};
pub use world::{NotionDef, SimWorld};
