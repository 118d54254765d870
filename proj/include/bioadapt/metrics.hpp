#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bioadapt/mrc_head.hpp"

namespace bioadapt::metrics {

struct GoldenAnswer {
    std::string id;
    std::string text;
};

struct MetricReport {
    double sacc = 0.0;
    double lacc = 0.0;
    double mrr = 0.0;
    std::optional<double> em;
    std::optional<double> f1;
    std::size_t n_test = 0;
};

/// Lowercase, strip punctuation, collapse whitespace, drop leading articles.
std::string normalize_answer(const std::string& text);

bool match(const std::string& predicted, const std::string& golden);

/// SAcc = c1/n, LAcc = c5/n, MRR = mean of 1/rank (0 when the golden answer is
/// absent from the five predictions). Questions without predictions count as
/// unanswered.
MetricReport compute_metrics(const std::map<std::string, PredictionList>& predictions,
                             const std::vector<GoldenAnswer>& golds);

/// Exact match and token-overlap F1 of the top-1 prediction.
std::pair<double, double> compute_em_f1(const std::map<std::string, PredictionList>& predictions,
                                        const std::vector<GoldenAnswer>& golds);

// ---- files -------------------------------------------------------------------

void write_predictions(const std::string& path,
                       const std::map<std::string, PredictionList>& predictions);
std::map<std::string, PredictionList> read_predictions(const std::string& path);

void write_golds(const std::string& path, const std::vector<GoldenAnswer>& golds);
std::vector<GoldenAnswer> read_golds(const std::string& path);

/// Adapter for BioASQ golden-enriched test files: {"questions":[{"id",
/// "type":"factoid", "exact_answer": ...}]}. Only factoid entries are kept;
/// the first synonym of the first answer is used as the golden text.
std::vector<GoldenAnswer> read_bioasq_golds(const std::string& path);

void write_report(const std::string& path, const MetricReport& report);
std::string format_report_table(const MetricReport& report);

}  // namespace bioadapt::metrics
