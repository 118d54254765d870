#include "bioadapt/discriminator.hpp"

#include <cmath>

#include "bioadapt/encoder.hpp"

namespace bioadapt {

using ad::Tape;
using ad::Tensor;

void init_discriminator_params(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
    init_encoder_layer_params(store, "de.l0", cfg.hidden_size, cfg.ffn_inner_size, rng);
    init_mrc_params(store, "dq", cfg.hidden_size, rng);
}

DiscriminatorOutput discriminate(Tape& tape, const ParamStore& store, const EncoderConfig& cfg,
                                 const DomainTriplet& triplet, bool train_flag, Rng& dropout_rng) {
    const std::size_t h = cfg.hidden_size;
    for (const Tensor* f : {&triplet.f_target, &triplet.f_source_anchor,
                            &triplet.f_source_positive}) {
        if (f->rank() != 2 || f->cols() != h) {
            throw DimensionError("discriminate: member width " + ad::shape_str(f->shape()) +
                                 " does not match hidden size " + std::to_string(h));
        }
    }
    auto run = [&](const Tensor& f) {
        std::vector<bool> all_valid(f.rows(), true);
        return encoder_layer(tape, store, "de.l0", cfg.num_heads, cfg.dropout_rate, f, all_valid,
                             train_flag, dropout_rng);
    };
    DiscriminatorOutput out;
    auto enc_target = run(triplet.f_target);
    auto enc_anchor = run(triplet.f_source_anchor);
    auto enc_positive = run(triplet.f_source_positive);
    out.cls_target = ad::row(tape, enc_target, 0);
    out.cls_anchor = ad::row(tape, enc_anchor, 0);
    out.cls_positive = ad::row(tape, enc_positive, 0);
    out.encoded_anchor = enc_anchor;
    return out;
}

Tensor triplet_loss(Tape& tape, const Tensor& cls_anchor, const Tensor& cls_positive,
                    const Tensor& cls_target, double alpha) {
    if (alpha < 0.0) throw ConfigError("triplet_loss: margin must be non-negative");
    // d(u, v) = 1 - CosSim(u, v); both distances share the anchor.
    auto d_pos = ad::scale(tape, ad::cosine_similarity(tape, cls_anchor, cls_positive), -1.0);
    auto d_neg = ad::scale(tape, ad::cosine_similarity(tape, cls_anchor, cls_target), -1.0);
    // (1 + d_pos') - (1 + d_neg') = d_pos' - d_neg', so the 1s cancel.
    auto hinge = ad::add_scalar(tape, ad::sub(tape, d_pos, d_neg), alpha);
    return ad::relu(tape, hinge);
}

Tensor distance_loss(Tape& tape, const Tensor& cls_anchor, const Tensor& cls_target) {
    auto cs = ad::cosine_similarity(tape, cls_anchor, cls_target);
    return ad::add_scalar(tape, ad::scale(tape, cs, -1.0), 1.0);
}

Tensor discriminator_loss(Tape& tape, const ParamStore& store, const ModelConfig& cfg,
                          const DomainTriplet& triplet, LossKind kind, bool aux_enabled,
                          bool train_flag, Rng& dropout_rng, DiscriminatorOutput* output_out) {
    if (aux_enabled && !triplet.anchor_golden) {
        throw LabelError("discriminator_loss: auxiliary task enabled but anchor has no golden span");
    }
    auto out = discriminate(tape, store, cfg.encoder, triplet, train_flag, dropout_rng);
    Tensor main_loss;
    if (kind == LossKind::triplet) {
        main_loss = triplet_loss(tape, out.cls_anchor, out.cls_positive, out.cls_target,
                                 cfg.margin);
    } else {
        main_loss = distance_loss(tape, out.cls_anchor, out.cls_target);
    }
    if (aux_enabled) {
        auto dist = span_distribution(tape, out.encoded_anchor, store, "dq");
        auto aux = mrc_loss(tape, dist, triplet.anchor_golden->first,
                            triplet.anchor_golden->second);
        main_loss = ad::add(tape, main_loss, aux);
    }
    if (output_out) *output_out = out;
    return main_loss;
}

double cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
    if (u.size() != v.size()) throw DimensionError("cosine_distance: length mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw DegenerateVectorError("cosine_distance: zero-norm vector");
    return 1.0 - dot / (std::sqrt(nu) * std::sqrt(nv));
}

PairDistanceMeans pair_distance_trace(const std::vector<TripletClsValues>& epoch_triplets) {
    if (epoch_triplets.empty()) {
        throw ContractError("pair_distance_trace: epoch contains no triplets");
    }
    PairDistanceMeans m;
    for (const auto& t : epoch_triplets) {
        m.source_source += cosine_distance(t.anchor, t.positive);
        m.source_target += cosine_distance(t.anchor, t.target);
    }
    const double n = static_cast<double>(epoch_triplets.size());
    m.source_source /= n;
    m.source_target /= n;
    return m;
}

}  // namespace bioadapt
