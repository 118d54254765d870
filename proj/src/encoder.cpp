#include "bioadapt/encoder.hpp"

#include <cmath>

namespace bioadapt {

using ad::Tape;
using ad::Tensor;

void init_encoder_layer_params(ParamStore& store, const std::string& prefix, std::size_t hidden,
                               std::size_t ffn_inner, Rng& rng) {
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) {
        init_normal(store.create(prefix + "." + w, {hidden, hidden}), rng);
    }
    for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"}) {
        init_zeros(store.create(prefix + "." + b, {hidden}));
    }
    init_ones(store.create(prefix + ".attn_ln.gamma", {hidden}));
    init_zeros(store.create(prefix + ".attn_ln.beta", {hidden}));
    init_normal(store.create(prefix + ".ffn.w1", {hidden, ffn_inner}), rng);
    init_zeros(store.create(prefix + ".ffn.b1", {ffn_inner}));
    init_normal(store.create(prefix + ".ffn.w2", {ffn_inner, hidden}), rng);
    init_zeros(store.create(prefix + ".ffn.b2", {hidden}));
    init_ones(store.create(prefix + ".ffn_ln.gamma", {hidden}));
    init_zeros(store.create(prefix + ".ffn_ln.beta", {hidden}));
}

void init_encoder_params(ParamStore& store, const std::string& prefix, const EncoderConfig& cfg,
                         Rng& rng) {
    cfg.validate();
    init_normal(store.create(prefix + ".tok_emb", {cfg.vocab_size, cfg.hidden_size}), rng);
    init_normal(store.create(prefix + ".pos_emb", {cfg.max_positions, cfg.hidden_size}), rng);
    init_normal(store.create(prefix + ".seg_emb", {2, cfg.hidden_size}), rng);
    init_ones(store.create(prefix + ".emb_ln.gamma", {cfg.hidden_size}));
    init_zeros(store.create(prefix + ".emb_ln.beta", {cfg.hidden_size}));
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        init_encoder_layer_params(store, prefix + ".l" + std::to_string(l), cfg.hidden_size,
                                  cfg.ffn_inner_size, rng);
    }
}

Tensor encoder_layer(Tape& tape, const ParamStore& store, const std::string& prefix,
                     std::size_t num_heads, double dropout_rate, const Tensor& hidden,
                     const std::vector<bool>& key_valid, bool train_flag, Rng& dropout_rng,
                     std::vector<Tensor>* attention_probs_out) {
    const std::size_t h = hidden.cols();
    if (h % num_heads != 0) {
        throw DimensionError("encoder_layer: width " + std::to_string(h) +
                             " not divisible by " + std::to_string(num_heads) + " heads");
    }
    if (store.get(prefix + ".attn.wq").rows() != h) {
        throw DimensionError("encoder_layer: hidden width " + std::to_string(h) +
                             " does not match layer parameters " +
                             std::to_string(store.get(prefix + ".attn.wq").rows()));
    }
    const std::size_t dh = h / num_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    auto q = ad::add_bias(tape, ad::matmul(tape, hidden, store.get(prefix + ".attn.wq")),
                          store.get(prefix + ".attn.bq"));
    auto k = ad::add_bias(tape, ad::matmul(tape, hidden, store.get(prefix + ".attn.wk")),
                          store.get(prefix + ".attn.bk"));
    auto v = ad::add_bias(tape, ad::matmul(tape, hidden, store.get(prefix + ".attn.wv")),
                          store.get(prefix + ".attn.bv"));

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(num_heads);
    for (std::size_t head = 0; head < num_heads; ++head) {
        const std::size_t c0 = head * dh, c1 = (head + 1) * dh;
        auto qh = ad::slice(tape, q, 1, c0, c1);
        auto kh = ad::slice(tape, k, 1, c0, c1);
        auto vh = ad::slice(tape, v, 1, c0, c1);
        auto scores = ad::scale(tape, ad::matmul(tape, qh, ad::transpose(tape, kh)), inv_sqrt_dh);
        auto probs = ad::masked_softmax(tape, scores, key_valid);
        if (attention_probs_out) attention_probs_out->push_back(probs);
        probs = ad::dropout(tape, probs, dropout_rate, train_flag, dropout_rng);
        head_outputs.push_back(ad::matmul(tape, probs, vh));
    }
    auto ctx = ad::concatenate(tape, head_outputs, 1);
    auto attn_out = ad::add_bias(tape, ad::matmul(tape, ctx, store.get(prefix + ".attn.wo")),
                                 store.get(prefix + ".attn.bo"));
    attn_out = ad::dropout(tape, attn_out, dropout_rate, train_flag, dropout_rng);
    auto x = ad::layer_norm(tape, ad::add(tape, hidden, attn_out),
                            store.get(prefix + ".attn_ln.gamma"),
                            store.get(prefix + ".attn_ln.beta"));

    auto inner = ad::gelu(tape, ad::add_bias(tape, ad::matmul(tape, x, store.get(prefix + ".ffn.w1")),
                                             store.get(prefix + ".ffn.b1")));
    auto ffn_out = ad::add_bias(tape, ad::matmul(tape, inner, store.get(prefix + ".ffn.w2")),
                                store.get(prefix + ".ffn.b2"));
    ffn_out = ad::dropout(tape, ffn_out, dropout_rate, train_flag, dropout_rng);
    return ad::layer_norm(tape, ad::add(tape, x, ffn_out), store.get(prefix + ".ffn_ln.gamma"),
                          store.get(prefix + ".ffn_ln.beta"));
}

std::vector<bool> key_mask_for(const corpus::TokenizedExample& example) {
    std::vector<bool> mask(example.input_ids.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = example.input_ids[i] != corpus::Vocabulary::kPad;
    }
    return mask;
}

Tensor encode_from_token_embeddings(Tape& tape, const ParamStore& store, const std::string& prefix,
                                    const EncoderConfig& cfg, const Tensor& token_embeddings,
                                    const std::vector<std::size_t>& segment_ids,
                                    const std::vector<bool>& key_valid, bool train_flag,
                                    Rng& dropout_rng, std::vector<Tensor>* attention_probs_out) {
    const std::size_t n = token_embeddings.rows();
    if (n > cfg.max_positions) {
        throw InputError("encode: sequence length " + std::to_string(n) +
                         " exceeds max positions " + std::to_string(cfg.max_positions));
    }
    if (segment_ids.size() != n || key_valid.size() != n) {
        throw DimensionError("encode: segment/mask length does not match sequence");
    }
    std::vector<std::size_t> positions(n);
    for (std::size_t i = 0; i < n; ++i) positions[i] = i;

    auto emb = ad::add(tape, token_embeddings,
                       ad::embedding_lookup(tape, store.get(prefix + ".pos_emb"), positions));
    emb = ad::add(tape, emb,
                  ad::embedding_lookup(tape, store.get(prefix + ".seg_emb"), segment_ids));
    emb = ad::layer_norm(tape, emb, store.get(prefix + ".emb_ln.gamma"),
                         store.get(prefix + ".emb_ln.beta"));
    emb = ad::dropout(tape, emb, cfg.dropout_rate, train_flag, dropout_rng);

    Tensor x = emb;
    for (std::size_t l = 0; l < cfg.num_layers; ++l) {
        x = encoder_layer(tape, store, prefix + ".l" + std::to_string(l), cfg.num_heads,
                          cfg.dropout_rate, x, key_valid, train_flag, dropout_rng,
                          attention_probs_out);
    }
    return x;
}

Tensor encode(Tape& tape, const ParamStore& store, const std::string& prefix,
              const EncoderConfig& cfg, const corpus::TokenizedExample& example, bool train_flag,
              Rng& dropout_rng, std::vector<Tensor>* attention_probs_out) {
    for (std::size_t id : example.input_ids) {
        if (id >= cfg.vocab_size) {
            throw VocabularyError("encode: token id " + std::to_string(id) +
                                  " out of range for vocab size " +
                                  std::to_string(cfg.vocab_size));
        }
    }
    for (std::size_t seg : example.segment_ids) {
        if (seg > 1) throw InputError("encode: segment id must be 0 or 1");
    }
    auto tok = ad::embedding_lookup(tape, store.get(prefix + ".tok_emb"), example.input_ids);
    return encode_from_token_embeddings(tape, store, prefix, cfg, tok, example.segment_ids,
                                        key_mask_for(example), train_flag, dropout_rng,
                                        attention_probs_out);
}

}  // namespace bioadapt
