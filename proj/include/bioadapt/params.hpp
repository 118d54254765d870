#pragma once

#include <map>
#include <string>

#include "bioadapt/autodiff.hpp"
#include "bioadapt/rng.hpp"

namespace bioadapt {

/// Named trainable parameters. Ordered by name so checkpoints and optimizer
/// traversal are deterministic.
class ParamStore {
  public:
    ad::Tensor& create(const std::string& name, ad::Shape shape);
    ad::Tensor& get(const std::string& name);
    const ad::Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    std::map<std::string, ad::Tensor>& all() { return params_; }
    const std::map<std::string, ad::Tensor>& all() const { return params_; }

    std::size_t parameter_count() const;
    void zero_grads();

  private:
    std::map<std::string, ad::Tensor> params_;
};

// Standard initializers for this model family.
void init_normal(ad::Tensor& t, Rng& rng, double stddev = 0.02);
void init_zeros(ad::Tensor& t);
void init_ones(ad::Tensor& t);

struct EncoderConfig {
    std::size_t num_layers = 2;
    std::size_t hidden_size = 64;
    std::size_t num_heads = 4;
    std::size_t ffn_inner_size = 256;
    double dropout_rate = 0.1;
    std::size_t max_positions = 384;
    std::size_t vocab_size = 0;

    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

/// Geometry and loss configuration stored alongside the weights so evaluation
/// can refuse a checkpoint that does not match its dataset.
struct ModelConfig {
    EncoderConfig encoder;
    double margin = 0.2;
    std::size_t max_answer_length = 30;
    std::size_t n_best = 5;

    bool operator==(const ModelConfig&) const = default;
};

struct ModelBundle {
    ModelConfig config;
    ParamStore params;
};

/// Builds all parameters of M_F, M_Q and D (D_e + D_q) from a seed.
ModelBundle init_model(const ModelConfig& config, std::uint64_t seed);

void save_checkpoint(const std::string& path, const ModelBundle& bundle);
ModelBundle load_checkpoint(const std::string& path);

}  // namespace bioadapt
