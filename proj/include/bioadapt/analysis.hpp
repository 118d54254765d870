#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bioadapt/corpus.hpp"
#include "bioadapt/params.hpp"

namespace bioadapt::analysis {

/// [CLS] feature vectors with domain labels (0 = source, 1 = target).
struct AnalysisFrame {
    std::vector<std::vector<double>> vectors;
    std::vector<int> domains;
    std::vector<std::string> ids;

    std::size_t size() const { return vectors.size(); }
};

void write_frame(const std::string& path, const AnalysisFrame& frame);
AnalysisFrame read_frame(const std::string& path);

/// Dense symmetric matrix with zero diagonal.
struct DistMatrix {
    std::size_t n = 0;
    std::vector<double> d;  // row-major n*n

    double& at(std::size_t i, std::size_t j) { return d[i * n + j]; }
    double at(std::size_t i, std::size_t j) const { return d[i * n + j]; }
};

DistMatrix cosine_distance_matrix(const std::vector<std::vector<double>>& vectors);
DistMatrix euclidean_distance_matrix(const std::vector<std::vector<double>>& points);

struct MdsResult {
    std::vector<std::vector<double>> points;  // n x dims
    std::vector<double> stress_history;       // raw stress per iteration
};

/// SMACOF stress majorization from a seeded random start. Raw stress is
/// non-increasing across iterations; stops on relative stress change < tol.
MdsResult mds_embed(const DistMatrix& distances, std::size_t dims = 2, std::size_t max_iter = 300,
                    double tol = 1e-6, std::uint64_t seed = 0);

enum class DbscanMetric { euclidean, cosine };

/// Standard density clustering; -1 labels noise points.
std::vector<int> dbscan(const std::vector<std::vector<double>>& points, double eps,
                        std::size_t min_samples, DbscanMetric metric = DbscanMetric::euclidean);
std::vector<int> dbscan_from_distances(const DistMatrix& distances, double eps,
                                       std::size_t min_samples);

/// Fraction of points whose cluster's majority domain matches their own;
/// noise counts as misclassified.
double clustering_accuracy(const std::vector<int>& cluster_ids, const std::vector<int>& domains);

/// Mean over non-noise points of (b-a)/max(a,b); singleton clusters score 0.
/// Requires at least two non-noise clusters.
double silhouette(const DistMatrix& distances, const std::vector<int>& cluster_ids);

/// eps heuristic: the q-th percentile of the positive pairwise distances.
double percentile_distance(const DistMatrix& distances, double percentile);

// ---- integrated gradients -----------------------------------------------------

/// Generic path integral: F is rebuilt per interpolation point on a fresh tape
/// with `x` as the differentiable leaf. Right-endpoint Riemann sum with m steps.
struct IgResult {
    std::vector<double> attributions;  // per component of x
    double f_input = 0.0;
    double f_baseline = 0.0;

    double completeness_residual() const;
};

IgResult integrated_gradients(
    const std::function<ad::Tensor(ad::Tape&, const ad::Tensor&)>& make_output,
    const std::vector<double>& input, const std::vector<double>& baseline, ad::Shape shape,
    std::size_t steps);

enum class OutputSelector { start_logit_at, end_logit_at };

struct TokenAttribution {
    std::string token;
    double start_attribution = 0.0;
    double end_attribution = 0.0;
};

struct AttributionReport {
    std::vector<TokenAttribution> tokens;
    std::size_t predicted_start = 0;
    std::size_t predicted_end = 0;
    double start_completeness_residual = 0.0;
    double end_completeness_residual = 0.0;
};

/// Per-token start/end attributions for one window, interpolating the token
/// embeddings from an all-[PAD] baseline ([CLS]/[SEP] rows retained).
AttributionReport attribute_example(const ModelBundle& bundle,
                                    const corpus::TokenizedExample& example,
                                    const corpus::Vocabulary& vocab, std::size_t steps);

void write_attribution_csv(const std::string& path, const AttributionReport& report);

}  // namespace bioadapt::analysis
