//! Read-only analyses of a trained model: intervention effect maps,
//! latent/label confusion, posterior clouds, and accuracy/SAP/MIG.

mod cloud;
mod intervention;
mod metrics;
mod probe;

pub use cloud::{cloud_separation, default_cloud_dims, posterior_cloud, write_cloud_csv, CloudPoint, CloudSeparation};
pub use intervention::{cosine_similarity, intervention_analysis, EffectMap, InterventionSpec, DEFAULT_PAIRS};
pub use metrics::{
    accuracy, accuracy_from_probabilities, bin_latent, evaluate_metrics, factor_bits, mig_matrix, mig_score,
    normalized_mutual_information, posterior_means, predict_probabilities, sap_matrix, sap_score, stump_balanced_accuracy,
    AccuracyReport, MetricsReport, MIG_BINS,
};
pub use probe::{confusion_from_latents, confusion_matrix, ConfusionMatrix, LogisticProbe, PROBE_RIDGE};
