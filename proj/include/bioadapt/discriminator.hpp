#pragma once

#include <optional>
#include <vector>

#include "bioadapt/autodiff.hpp"
#include "bioadapt/mrc_head.hpp"
#include "bioadapt/params.hpp"

namespace bioadapt {

/// Triplet of feature matrices entering D: target sample, source anchor,
/// second (positive) source sample, plus the anchor's golden span for the
/// auxiliary task.
struct DomainTriplet {
    ad::Tensor f_target;
    ad::Tensor f_source_anchor;
    ad::Tensor f_source_positive;
    std::optional<std::pair<std::size_t, std::size_t>> anchor_golden;  // (y_start, y_end)
};

struct DiscriminatorOutput {
    ad::Tensor cls_target;
    ad::Tensor cls_anchor;
    ad::Tensor cls_positive;
    ad::Tensor encoded_anchor;  // full D_e output for the anchor, feeds D_q
};

enum class LossKind { triplet, distance };

/// One encoder layer (D_e, under "de.l0") and one MRC head (D_q, under "dq").
void init_discriminator_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng);

/// Applies the shared D_e layer to each triplet member and extracts the
/// position-0 [CLS] vectors.
DiscriminatorOutput discriminate(ad::Tape& tape, const ParamStore& store,
                                 const EncoderConfig& cfg, const DomainTriplet& triplet,
                                 bool train_flag, Rng& dropout_rng);

/// max{ d(anchor, positive) - d(anchor, target) + alpha, 0 }, d = 1 - cosine.
ad::Tensor triplet_loss(ad::Tape& tape, const ad::Tensor& cls_anchor,
                        const ad::Tensor& cls_positive, const ad::Tensor& cls_target,
                        double alpha);

/// d(anchor, target) = 1 - cosine similarity (the contrastive variant).
ad::Tensor distance_loss(ad::Tape& tape, const ad::Tensor& cls_anchor,
                         const ad::Tensor& cls_target);

/// L_D = L_D,triplet (or distance variant) + L_D,aux. With aux disabled the
/// second term is dropped and D_q receives no gradient.
ad::Tensor discriminator_loss(ad::Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                              const DomainTriplet& triplet, LossKind kind, bool aux_enabled,
                              bool train_flag, Rng& dropout_rng,
                              DiscriminatorOutput* output_out = nullptr);

// ---- per-epoch cosine-distance trace ---------------------------------------

/// Plain-value [CLS] vectors of one triplet, captured during training.
struct TripletClsValues {
    std::vector<double> anchor;
    std::vector<double> positive;
    std::vector<double> target;
};

struct PairDistanceMeans {
    double source_source = 0.0;
    double source_target = 0.0;
};

double cosine_distance(const std::vector<double>& u, const std::vector<double>& v);

/// Mean d(anchor, positive) and d(anchor, target) over one epoch's triplets.
PairDistanceMeans pair_distance_trace(const std::vector<TripletClsValues>& epoch_triplets);

}  // namespace bioadapt
