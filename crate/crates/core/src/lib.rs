//! Cross-modal embedding alignment: linear text/image encoders into a
//! shared space, four training objectives (sum-margin, max-margin, NCA and
//! a hubness-aware smooth objective with optional memory-bank weighting),
//! analytic gradients with a finite-difference checker, retrieval metrics,
//! hubness diagnostics, and binary dataset/model formats.

pub mod bank;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod matrix;
pub mod protocol;
pub mod report;
pub mod train;

pub use bank::{global_weights, knn, sample_bank, GlobalWeightConfig, MemoryBank};
pub use data::{
    generate_synthetic, load_dataset, load_dataset_manifest, load_encoder, read_features,
    save_dataset, save_encoder, write_features, DatasetManifest, FeatureDataset, SyntheticDataset,
    SyntheticProvenance, SyntheticSpec,
};
pub use embed::{
    backward, cosine_similarity_matrix, cross_similarity, l2_normalize_rows, EncoderPair,
    GradientTape, NormalizedRows, SimilarityMatrix,
};
pub use error::{Error, Result};
pub use eval::{
    evaluate, fold_averaged, hubness_report, rank_ground_truth, retrieval_report, rsum, Direction,
    EvalSummary, HubnessReport, RetrievalReport,
};
pub use gradcheck::{gradient_check, GradCheckLoss, GradCheckReport, DEFAULT_FD_STEP, DEFAULT_FD_TOLERANCE};
pub use loss::{
    hal_loss, max_margin, nca_loss, smooth_max_term, sum_margin, HalConfig, LossKind, LossResult,
    TripletConfig, WeightMatrix,
};
pub use matrix::Matrix;
pub use protocol::{
    benchmark_spec, benchmark_split, variant_config, BenchmarkVariant, BENCHMARK_BATCH_SIZE,
    BENCHMARK_CAPTIONS_PER_IMAGE, BENCHMARK_EPOCHS, BENCHMARK_FEATURE_DIM, BENCHMARK_HUB_BIAS,
    BENCHMARK_IMAGES, BENCHMARK_JOINT_DIM, BENCHMARK_LATENT_DIM, BENCHMARK_NOISE_STD,
};
pub use report::{history_csv, hubness_csv, metrics_csv, write_text};
pub use train::{
    evaluate_encoder, initial_encoder, lr_schedule, train, EpochRecord, OptimizerKind, TrainConfig,
    TrainHistory, TrainOutcome, Trainer,
};
