#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bioadapt/corpus.hpp"
#include "bioadapt/discriminator.hpp"
#include "bioadapt/metrics.hpp"
#include "bioadapt/params.hpp"

namespace bioadapt {

struct LambdaSchedule {
    double start = 0.0;
    double increment = 0.01;
    std::size_t every_epochs = 10;
    double cap = 0.04;
};

/// 0 for epochs 0-9, 0.01 for 10-19, ... capped at 0.04 under the defaults.
double lambda_at(std::size_t epoch, const LambdaSchedule& schedule);

enum class GrlScope { full_L_D, triplet_only };

struct TrainConfig {
    double learning_rate = 5e-5;
    std::size_t batch_triplets = 12;
    std::size_t epochs = 50;
    std::size_t steps_per_epoch = 25;
    LambdaSchedule lambda_schedule;
    std::uint64_t seed = 42;
    LossKind loss_kind = LossKind::triplet;
    bool aux_enabled = true;
    bool discriminator_enabled = true;  // false = baseline (L_total = L_Q)
    double labeled_target_ratio = 0.0;
    GrlScope grl_scope = GrlScope::full_L_D;
    bool train_dropout = true;
    double divergence_limit = 1e6;
    bool trace_vectors = false;  // keep per-triplet [CLS] vectors per epoch
    bool eval_final = true;
    std::size_t eval_every = 0;  // 0 = no held-out evaluation during training

    void validate() const;
};

/// Tokenized training units plus evaluation material.
struct TrainData {
    std::vector<corpus::TokenizedExample> source_units;
    std::vector<std::size_t> source_anchor_pool;  // labeled source units
    std::vector<corpus::TokenizedExample> target_units;
    std::vector<corpus::TokenizedExample> test_windows;
    std::vector<metrics::GoldenAnswer> golds;
};

/// Tokenizes raw datasets; labeled_target_ratio decides how many target-train
/// examples keep their labels, the rest are masked to {[CLS],[MASK],[SEP],C,[SEP]}.
TrainData build_train_data(const std::vector<corpus::RawExample>& source_train,
                           const std::vector<corpus::RawExample>& target_train,
                           const std::vector<corpus::RawExample>& target_test,
                           const corpus::Vocabulary& vocab, const corpus::TokenizerLimits& limits,
                           double labeled_target_ratio, std::uint64_t seed);

struct TripletIndices {
    std::size_t anchor;
    std::size_t positive;
    std::size_t target;
};

/// Uniformly samples batches of (anchor, positive, target) unit indices; the
/// two source members are always distinct examples.
std::vector<TripletIndices> sample_step(const TrainData& data, Rng& rng, std::size_t count,
                                        bool anchors_need_labels);

class Adam {
  public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(ParamStore& params);

  private:
    double lr_, beta1_, beta2_, eps_;
    std::size_t t_ = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

struct StepStats {
    double loss_q = 0.0;
    double loss_d = 0.0;
    double loss_total = 0.0;  // L_Q - lambda * L_D
    std::vector<TripletClsValues> cls;
};

struct TrainState {
    std::size_t epoch = 0;
    double lambda = 0.0;
    Rng sample_rng;
    Rng dropout_rng;
    Adam optimizer;

    TrainState(const TrainConfig& cfg)
        : sample_rng(cfg.seed * 2654435761u + 1), dropout_rng(cfg.seed * 2654435761u + 2),
          optimizer(cfg.learning_rate) {}
};

/// One joint optimization step over a triplet batch (or a plain source batch
/// when the discriminator is disabled). Computes L_Q + GRL-wired L_D, runs one
/// backward pass and one optimizer update.
StepStats train_step(ModelBundle& bundle, const TrainData& data,
                     const std::vector<TripletIndices>& batch, const TrainConfig& cfg,
                     TrainState& state);

struct EpochStats {
    std::size_t epoch = 0;
    double lambda = 0.0;
    double mean_loss_q = 0.0;
    double mean_loss_d = 0.0;
    double mean_loss_total = 0.0;
    std::optional<double> mean_d_source_source;
    std::optional<double> mean_d_source_target;
    std::optional<metrics::MetricReport> eval;
};

struct TrainReport {
    std::vector<EpochStats> epochs;
    bool diverged = false;
    std::string divergence_message;
    std::optional<metrics::MetricReport> final_metrics;
    // per-epoch [CLS] logs, populated when cfg.trace_vectors is set
    std::vector<std::vector<TripletClsValues>> epoch_cls;
};

/// Full training loop with per-epoch lambda updates and distance traces. On
/// divergence the parameters are rolled back to the last completed epoch.
TrainReport run_experiment(ModelBundle& bundle, const TrainData& data, const TrainConfig& cfg);

// ---- model-level evaluation helpers -----------------------------------------

/// Five-best predictions per question id (windows of one id are merged).
std::map<std::string, PredictionList> predict_dataset(
    const ModelBundle& bundle, const std::vector<corpus::TokenizedExample>& windows);

metrics::MetricReport evaluate_model(const ModelBundle& bundle,
                                     const std::vector<corpus::TokenizedExample>& windows,
                                     const std::vector<metrics::GoldenAnswer>& golds);

/// M_F [CLS] feature vectors, one row per window, dropout disabled.
std::vector<std::vector<double>> extract_cls(const ModelBundle& bundle,
                                             const std::vector<corpus::TokenizedExample>& windows);

}  // namespace bioadapt
