#include "bioadapt/mrc_head.hpp"

#include <algorithm>
#include <unordered_map>

namespace bioadapt {

using ad::Tape;
using ad::Tensor;

void init_mrc_params(ParamStore& store, const std::string& prefix, std::size_t hidden, Rng& rng) {
    init_normal(store.create(prefix + ".w_start", {hidden, 1}), rng);
    init_normal(store.create(prefix + ".w_end", {hidden, 1}), rng);
}

SpanDistribution span_distribution(Tape& tape, const Tensor& features, const ParamStore& store,
                                   const std::string& prefix) {
    const auto& w_start = store.get(prefix + ".w_start");
    const auto& w_end = store.get(prefix + ".w_end");
    if (features.rank() != 2 || features.cols() != w_start.rows()) {
        throw DimensionError("span_distribution: feature width " +
                             ad::shape_str(features.shape()) + " does not match head " +
                             ad::shape_str(w_start.shape()));
    }
    const std::size_t n = features.rows();
    auto start_logits = ad::reshape(tape, ad::matmul(tape, features, w_start), {n});
    auto end_logits = ad::reshape(tape, ad::matmul(tape, features, w_end), {n});
    return {ad::softmax(tape, start_logits), ad::softmax(tape, end_logits)};
}

Tensor mrc_loss(Tape& tape, const SpanDistribution& dist, std::size_t y_start,
                std::size_t y_end) {
    if (y_start >= dist.p_start.size() || y_end >= dist.p_end.size()) {
        throw LabelError("mrc_loss: golden positions (" + std::to_string(y_start) + "," +
                         std::to_string(y_end) + ") out of range " +
                         std::to_string(dist.p_start.size()));
    }
    // Only the golden entries are logged; other probabilities may be exact 0.
    auto ls = ad::log(tape, ad::pick(tape, dist.p_start, y_start));
    auto le = ad::log(tape, ad::pick(tape, dist.p_end, y_end));
    return ad::scale(tape, ad::add(tape, ls, le), -0.5);
}

SpanScores span_scores(const SpanDistribution& dist) {
    return {dist.p_start.values(), dist.p_end.values()};
}

namespace {

struct Candidate {
    std::string text;
    std::size_t start_token, end_token;
    double score;
    std::size_t start_char, end_char;
};

void collect_candidates(const SpanScores& scores, const corpus::TokenizedExample& ex,
                        std::size_t max_answer_length, std::vector<Candidate>& out) {
    if (ex.context_begin >= ex.context_end) {
        throw DecodingError("decode_n_best: empty context region in example " + ex.example_id);
    }
    if (scores.p_start.size() != ex.input_ids.size() ||
        scores.p_end.size() != ex.input_ids.size()) {
        throw DimensionError("decode_n_best: score length does not match the window");
    }
    for (std::size_t s = ex.context_begin; s < ex.context_end; ++s) {
        const std::size_t last = std::min(ex.context_end - 1, s + max_answer_length - 1);
        for (std::size_t e = s; e <= last; ++e) {
            Candidate c;
            c.text = ex.span_text(s, e);
            c.start_token = s;
            c.end_token = e;
            c.score = scores.p_start[s] * scores.p_end[e];
            c.start_char = ex.offsets[s].begin;
            c.end_char = ex.offsets[e].end;
            out.push_back(std::move(c));
        }
    }
}

PredictionList rank(std::vector<Candidate> candidates, std::size_t n_best) {
    std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a,
                                                              const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.start_char != b.start_char) return a.start_char < b.start_char;
        return a.end_char < b.end_char;
    });
    PredictionList out;
    std::unordered_map<std::string, bool> seen;
    for (const auto& c : candidates) {
        if (out.size() == n_best) break;
        if (seen.count(c.text)) continue;  // drop exact-duplicate answer texts
        seen[c.text] = true;
        out.push_back({c.text, c.start_token, c.end_token, c.score});
    }
    return out;
}

}  // namespace

PredictionList decode_n_best(const SpanScores& scores, const corpus::TokenizedExample& example,
                             std::size_t n_best, std::size_t max_answer_length) {
    if (n_best == 0) throw ContractError("decode_n_best: n_best must be >= 1");
    std::vector<Candidate> candidates;
    collect_candidates(scores, example, max_answer_length, candidates);
    return rank(std::move(candidates), n_best);
}

PredictionList decode_n_best_merged(
    const std::vector<std::pair<SpanScores, const corpus::TokenizedExample*>>& windows,
    std::size_t n_best, std::size_t max_answer_length) {
    if (n_best == 0) throw ContractError("decode_n_best: n_best must be >= 1");
    if (windows.empty()) throw DecodingError("decode_n_best: no windows to decode");
    std::vector<Candidate> candidates;
    for (const auto& [scores, ex] : windows) {
        collect_candidates(scores, *ex, max_answer_length, candidates);
    }
    return rank(std::move(candidates), n_best);
}

}  // namespace bioadapt
