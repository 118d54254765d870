#include "bioadapt/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bioadapt::metrics {

using nlohmann::json;
using nlohmann::ordered_json;

std::string normalize_answer(const std::string& text) {
    std::string lowered;
    lowered.reserve(text.size());
    for (char c : text) {
        if (std::ispunct(static_cast<unsigned char>(c))) continue;
        lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    std::istringstream in(lowered);
    std::vector<std::string> words;
    std::string w;
    while (in >> w) words.push_back(w);
    // only leading articles are dropped
    std::size_t begin = 0;
    while (begin < words.size() &&
           (words[begin] == "a" || words[begin] == "an" || words[begin] == "the")) {
        ++begin;
    }
    std::string out;
    for (std::size_t i = begin; i < words.size(); ++i) {
        if (!out.empty()) out += ' ';
        out += words[i];
    }
    return out;
}

bool match(const std::string& predicted, const std::string& golden) {
    return normalize_answer(predicted) == normalize_answer(golden);
}

MetricReport compute_metrics(const std::map<std::string, PredictionList>& predictions,
                             const std::vector<GoldenAnswer>& golds) {
    if (golds.empty()) throw MetricError("compute_metrics: empty gold set");
    std::size_t c1 = 0, c5 = 0;
    double mrr_sum = 0.0;
    for (const auto& gold : golds) {
        auto it = predictions.find(gold.id);
        if (it == predictions.end()) continue;  // unanswered
        const PredictionList& preds = it->second;
        for (std::size_t rank = 0; rank < preds.size() && rank < 5; ++rank) {
            if (match(preds[rank].text, gold.text)) {
                if (rank == 0) ++c1;
                ++c5;
                mrr_sum += 1.0 / static_cast<double>(rank + 1);
                break;
            }
        }
    }
    MetricReport r;
    r.n_test = golds.size();
    const double n = static_cast<double>(golds.size());
    r.sacc = static_cast<double>(c1) / n;
    r.lacc = static_cast<double>(c5) / n;
    r.mrr = mrr_sum / n;
    auto [em, f1] = compute_em_f1(predictions, golds);
    r.em = em;
    r.f1 = f1;
    return r;
}

namespace {

std::vector<std::string> normalized_tokens(const std::string& text) {
    std::istringstream in(normalize_answer(text));
    std::vector<std::string> out;
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

double token_f1(const std::string& predicted, const std::string& golden) {
    auto p = normalized_tokens(predicted);
    auto g = normalized_tokens(golden);
    if (p.empty() || g.empty()) return p.empty() && g.empty() ? 1.0 : 0.0;
    std::map<std::string, std::size_t> gold_counts;
    for (const auto& w : g) ++gold_counts[w];
    std::size_t overlap = 0;
    for (const auto& w : p) {
        auto it = gold_counts.find(w);
        if (it != gold_counts.end() && it->second > 0) {
            --it->second;
            ++overlap;
        }
    }
    if (overlap == 0) return 0.0;
    const double precision = static_cast<double>(overlap) / static_cast<double>(p.size());
    const double recall = static_cast<double>(overlap) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

}  // namespace

std::pair<double, double> compute_em_f1(const std::map<std::string, PredictionList>& predictions,
                                        const std::vector<GoldenAnswer>& golds) {
    if (golds.empty()) throw MetricError("compute_em_f1: empty gold set");
    double em_sum = 0.0, f1_sum = 0.0;
    for (const auto& gold : golds) {
        auto it = predictions.find(gold.id);
        if (it == predictions.end() || it->second.empty()) continue;
        const std::string& top1 = it->second.front().text;
        if (match(top1, gold.text)) em_sum += 1.0;
        f1_sum += token_f1(top1, gold.text);
    }
    const double n = static_cast<double>(golds.size());
    return {em_sum / n, f1_sum / n};
}

// ---- files --------------------------------------------------------------------

void write_predictions(const std::string& path,
                       const std::map<std::string, PredictionList>& predictions) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write predictions: " + path);
    for (const auto& [id, preds] : predictions) {
        ordered_json j;
        j["id"] = id;
        ordered_json arr = ordered_json::array();
        for (const auto& p : preds) {
            arr.push_back({{"text", p.text},
                           {"start_token", p.start_token},
                           {"end_token", p.end_token},
                           {"score", p.score}});
        }
        j["predictions"] = arr;
        out << j.dump() << "\n";
    }
}

std::map<std::string, PredictionList> read_predictions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read predictions: " + path);
    std::map<std::string, PredictionList> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        PredictionList preds;
        for (const auto& p : j.at("predictions")) {
            preds.push_back({p.at("text").get<std::string>(),
                             p.at("start_token").get<std::size_t>(),
                             p.at("end_token").get<std::size_t>(), p.at("score").get<double>()});
        }
        out[j.at("id").get<std::string>()] = std::move(preds);
    }
    return out;
}

void write_golds(const std::string& path, const std::vector<GoldenAnswer>& golds) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write gold file: " + path);
    for (const auto& g : golds) {
        ordered_json j;
        j["id"] = g.id;
        j["answer"] = g.text;
        out << j.dump() << "\n";
    }
}

std::vector<GoldenAnswer> read_golds(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read gold file: " + path);
    std::vector<GoldenAnswer> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        GoldenAnswer g{j.at("id").get<std::string>(), j.at("answer").get<std::string>()};
        if (g.text.empty()) throw InputError("gold file has empty answer for id " + g.id);
        out.push_back(std::move(g));
    }
    return out;
}

std::vector<GoldenAnswer> read_bioasq_golds(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read BioASQ gold file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw InputError(path + ": bad JSON: " + e.what());
    }
    std::vector<GoldenAnswer> out;
    for (const auto& q : j.at("questions")) {
        if (q.contains("type") && q.at("type").get<std::string>() != "factoid") continue;
        if (!q.contains("exact_answer")) continue;
        const auto& ans = q.at("exact_answer");
        std::string text;
        if (ans.is_string()) {
            text = ans.get<std::string>();
        } else if (ans.is_array() && !ans.empty()) {
            // factoid answers arrive as [[synonym, ...], ...] or [synonym, ...]
            const auto& first = ans[0];
            text = first.is_array() ? first.at(0).get<std::string>()
                                    : first.get<std::string>();
        }
        if (!text.empty()) out.push_back({q.at("id").get<std::string>(), text});
    }
    return out;
}

void write_report(const std::string& path, const MetricReport& r) {
    ordered_json j;
    j["sacc"] = r.sacc;
    j["lacc"] = r.lacc;
    j["mrr"] = r.mrr;
    if (r.em) j["em"] = *r.em;
    if (r.f1) j["f1"] = *r.f1;
    j["n_test"] = r.n_test;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write metric report: " + path);
    out << j.dump(2) << "\n";
}

std::string format_report_table(const MetricReport& r) {
    std::ostringstream os;
    char buf[64];
    os << "metric  value\n";
    std::snprintf(buf, sizeof buf, "SAcc    %.4f\n", r.sacc);
    os << buf;
    std::snprintf(buf, sizeof buf, "LAcc    %.4f\n", r.lacc);
    os << buf;
    std::snprintf(buf, sizeof buf, "MRR     %.4f\n", r.mrr);
    os << buf;
    if (r.em) {
        std::snprintf(buf, sizeof buf, "EM      %.4f\n", *r.em);
        os << buf;
    }
    if (r.f1) {
        std::snprintf(buf, sizeof buf, "F1      %.4f\n", *r.f1);
        os << buf;
    }
    os << "n_test  " << r.n_test << "\n";
    return os.str();
}

}  // namespace bioadapt::metrics
