#pragma once

#include <vector>

#include "bioadapt/autodiff.hpp"
#include "bioadapt/corpus.hpp"
#include "bioadapt/params.hpp"

namespace bioadapt {

/// Creates token/position/segment embeddings plus num_layers encoder layers
/// under `prefix.` in the store.
void init_encoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng);

/// Creates one encoder layer's parameters under `prefix.` (used by both the
/// feature extractor stack and the discriminator's Siamese layer).
void init_encoder_layer_params(ParamStore& store, const std::string& prefix, std::size_t hidden,
                               std::size_t ffn_inner, Rng& rng);

/// Post-layer-norm transformer block: multi-head attention and GeLU FFN, each
/// followed by residual + layer norm. Shape-preserving over [n x H].
/// key_valid marks positions attention may look at ([PAD] positions are false).
ad::Tensor encoder_layer(ad::Tape& tape, const ParamStore& store, const std::string& prefix,
                         std::size_t num_heads, double dropout_rate, const ad::Tensor& hidden,
                         const std::vector<bool>& key_valid, bool train_flag, Rng& dropout_rng,
                         std::vector<ad::Tensor>* attention_probs_out = nullptr);

/// M_F: embeds the token sequence and runs the layer stack. Returns the
/// [n x H] feature matrix; row 0 is the [CLS] vector.
ad::Tensor encode(ad::Tape& tape, const ParamStore& store, const std::string& prefix,
                  const EncoderConfig& cfg, const corpus::TokenizedExample& example,
                  bool train_flag, Rng& dropout_rng,
                  std::vector<ad::Tensor>* attention_probs_out = nullptr);

/// Same as encode() but starts from a caller-provided token-embedding matrix
/// (the entry point integrated-gradients interpolates on).
ad::Tensor encode_from_token_embeddings(ad::Tape& tape, const ParamStore& store,
                                        const std::string& prefix, const EncoderConfig& cfg,
                                        const ad::Tensor& token_embeddings,
                                        const std::vector<std::size_t>& segment_ids,
                                        const std::vector<bool>& key_valid, bool train_flag,
                                        Rng& dropout_rng,
                                        std::vector<ad::Tensor>* attention_probs_out = nullptr);

std::vector<bool> key_mask_for(const corpus::TokenizedExample& example);

}  // namespace bioadapt
