//! Explainability support for embedding retrieval.
//!
//! [`proxy`] holds three differentiable stand-ins for the k-NN decision and
//! their analytic gradients with respect to the query embedding;
//! [`faithfulness`] scores externally produced relevance maps by patch
//! flipping.

pub mod faithfulness;
pub mod proxy;

pub use faithfulness::{
    assemble_probes, curve_auc, patch_order, perturbation_curve, read_relevance_maps, relevance_mass_in_mask,
    write_relevance_maps, FaithfulnessProbe, PatchEmbedder, PatchGrid, PerturbationCurve, PerturbationOrder,
    RelevanceMap,
};
pub use proxy::{
    grad_knn_margin, grad_proto_margin, grad_similarity, knn_softmax, score_knn_margin, score_proto_margin,
    score_similarity, PrototypeWeighting, ProxyContext, DEFAULT_HARD_NEGATIVES, DEFAULT_TEMPERATURE,
};
