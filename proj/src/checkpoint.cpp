#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "bioadapt/discriminator.hpp"
#include "bioadapt/encoder.hpp"
#include "bioadapt/mrc_head.hpp"
#include "bioadapt/params.hpp"

namespace bioadapt {

using nlohmann::json;
using nlohmann::ordered_json;

ad::Tensor& ParamStore::create(const std::string& name, ad::Shape shape) {
    if (params_.count(name)) throw ContractError("parameter already exists: " + name);
    auto [it, ok] = params_.emplace(name, ad::Tensor::zeros(std::move(shape), true));
    (void)ok;
    return it->second;
}

ad::Tensor& ParamStore::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const ad::Tensor& ParamStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

std::size_t ParamStore::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void init_normal(ad::Tensor& t, Rng& rng, double stddev) {
    for (auto& v : t.values()) v = rng.normal(0.0, stddev);
}

void init_zeros(ad::Tensor& t) {
    std::fill(t.values().begin(), t.values().end(), 0.0);
}

void init_ones(ad::Tensor& t) {
    std::fill(t.values().begin(), t.values().end(), 1.0);
}

void EncoderConfig::validate() const {
    if (hidden_size == 0 || num_heads == 0 || num_layers == 0 || ffn_inner_size == 0) {
        throw ConfigError("encoder config: zero-sized geometry");
    }
    if (hidden_size % num_heads != 0) {
        throw ConfigError("encoder config: hidden size " + std::to_string(hidden_size) +
                          " not divisible by " + std::to_string(num_heads) + " heads");
    }
    if (vocab_size <= corpus::Vocabulary::kMask) {
        throw ConfigError("encoder config: vocab size must cover the special tokens");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw ConfigError("encoder config: dropout rate outside [0,1)");
    }
}

ModelBundle init_model(const ModelConfig& config, std::uint64_t seed) {
    config.encoder.validate();
    if (config.margin < 0.0) throw ConfigError("model config: margin must be non-negative");
    ModelBundle bundle;
    bundle.config = config;
    Rng rng(seed);
    init_encoder_params(bundle.params, "mf", config.encoder, rng);
    init_mrc_params(bundle.params, "mq", config.encoder.hidden_size, rng);
    init_discriminator_params(bundle.params, config.encoder, rng);
    return bundle;
}

// Checkpoint layout: a two-line header (format tag, one-line JSON metadata)
// followed by one "param <name> <rank> <dims...>" line and one line of
// %.17g values per parameter, ordered by name.

namespace {

ordered_json config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["num_layers"] = c.encoder.num_layers;
    j["hidden_size"] = c.encoder.hidden_size;
    j["num_heads"] = c.encoder.num_heads;
    j["ffn_inner_size"] = c.encoder.ffn_inner_size;
    j["dropout_rate"] = c.encoder.dropout_rate;
    j["max_positions"] = c.encoder.max_positions;
    j["vocab_size"] = c.encoder.vocab_size;
    j["margin"] = c.margin;
    j["max_answer_length"] = c.max_answer_length;
    j["n_best"] = c.n_best;
    return j;
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.encoder.num_layers = j.at("num_layers").get<std::size_t>();
    c.encoder.hidden_size = j.at("hidden_size").get<std::size_t>();
    c.encoder.num_heads = j.at("num_heads").get<std::size_t>();
    c.encoder.ffn_inner_size = j.at("ffn_inner_size").get<std::size_t>();
    c.encoder.dropout_rate = j.at("dropout_rate").get<double>();
    c.encoder.max_positions = j.at("max_positions").get<std::size_t>();
    c.encoder.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.margin = j.at("margin").get<double>();
    c.max_answer_length = j.at("max_answer_length").get<std::size_t>();
    c.n_best = j.at("n_best").get<std::size_t>();
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelBundle& bundle) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    out << "bioadapt-checkpoint 1\n";
    out << config_to_json(bundle.config).dump() << "\n";
    out << "params " << bundle.params.all().size() << "\n";
    char buf[40];
    for (const auto& [name, t] : bundle.params.all()) {
        out << "param " << name << " " << t.rank();
        for (std::size_t d : t.shape()) out << " " << d;
        out << "\n";
        for (std::size_t i = 0; i < t.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", t.at(i));
            if (i) out << ' ';
            out << buf;
        }
        out << "\n";
    }
    out << "end\n";
}

ModelBundle load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read checkpoint: " + path);
    std::string tag;
    int version = 0;
    in >> tag >> version;
    if (tag != "bioadapt-checkpoint" || version != 1) {
        throw InputError("not a supported checkpoint file: " + path);
    }
    std::string line;
    std::getline(in, line);  // end of header line
    std::getline(in, line);
    ModelBundle bundle;
    bundle.config = config_from_json(json::parse(line));
    bundle.config.encoder.validate();

    std::size_t count = 0;
    in >> tag >> count;
    if (tag != "params") throw InputError("malformed checkpoint: " + path);
    for (std::size_t p = 0; p < count; ++p) {
        std::string name;
        std::size_t rank = 0;
        in >> tag >> name >> rank;
        if (tag != "param") throw InputError("malformed checkpoint near parameter " + name);
        ad::Shape shape(rank);
        for (auto& d : shape) in >> d;
        auto& t = bundle.params.create(name, shape);
        for (auto& v : t.values()) in >> v;
        if (!in) throw InputError("truncated checkpoint: " + path);
    }
    in >> tag;
    if (tag != "end") throw InputError("checkpoint missing end marker: " + path);
    return bundle;
}

}  // namespace bioadapt
