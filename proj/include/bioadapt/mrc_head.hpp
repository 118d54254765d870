#pragma once

#include <string>
#include <vector>

#include "bioadapt/autodiff.hpp"
#include "bioadapt/corpus.hpp"
#include "bioadapt/params.hpp"

namespace bioadapt {

/// Start/end position distributions over one window's full sequence.
struct SpanDistribution {
    ad::Tensor p_start;  // [n], sums to 1
    ad::Tensor p_end;    // [n], sums to 1
};

struct Prediction {
    std::string text;
    std::size_t start_token = 0;
    std::size_t end_token = 0;
    double score = 0.0;
};

using PredictionList = std::vector<Prediction>;  // <= n_best, strictly ordered

/// Creates W^start and W^end ([H x 1], no bias) under `prefix.`.
void init_mrc_params(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng);

/// Softmax over the whole sequence of W.h_l for both heads.
SpanDistribution span_distribution(ad::Tape& tape, const ad::Tensor& features,
                                   const ParamStore& store, const std::string& prefix);

/// L_Q = -(log p_start[y_start] + log p_end[y_end]) / 2.
ad::Tensor mrc_loss(ad::Tape& tape, const SpanDistribution& dist, std::size_t y_start,
                    std::size_t y_end);

/// Plain-value span scores used at decode time.
struct SpanScores {
    std::vector<double> p_start;
    std::vector<double> p_end;
};

SpanScores span_scores(const SpanDistribution& dist);

/// Enumerates valid context spans of one window, scored p_start[s]*p_end[e].
PredictionList decode_n_best(const SpanScores& scores, const corpus::TokenizedExample& example,
                             std::size_t n_best = 5, std::size_t max_answer_length = 30);

/// Merges candidates from all windows of one question into one ranked list,
/// dropping exact-duplicate answer texts.
PredictionList decode_n_best_merged(
    const std::vector<std::pair<SpanScores, const corpus::TokenizedExample*>>& windows,
    std::size_t n_best = 5, std::size_t max_answer_length = 30);

}  // namespace bioadapt
