#include "bioadapt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "bioadapt/encoder.hpp"
#include "bioadapt/mrc_head.hpp"

namespace bioadapt::analysis {

using nlohmann::json;
using nlohmann::ordered_json;

void write_frame(const std::string& path, const AnalysisFrame& frame) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write analysis frame: " + path);
    for (std::size_t i = 0; i < frame.size(); ++i) {
        ordered_json j;
        j["id"] = frame.ids[i];
        j["domain"] = frame.domains[i] == 0 ? "source" : "target";
        j["vector"] = frame.vectors[i];
        out << j.dump() << "\n";
    }
}

AnalysisFrame read_frame(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read analysis frame: " + path);
    AnalysisFrame frame;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        frame.ids.push_back(j.at("id").get<std::string>());
        frame.domains.push_back(j.at("domain").get<std::string>() == "source" ? 0 : 1);
        frame.vectors.push_back(j.at("vector").get<std::vector<double>>());
    }
    return frame;
}

DistMatrix cosine_distance_matrix(const std::vector<std::vector<double>>& vectors) {
    const std::size_t n = vectors.size();
    std::vector<double> norms(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (double v : vectors[i]) s += v * v;
        if (s == 0.0) {
            throw DegenerateVectorError("cosine_distance_matrix: zero vector at row " +
                                        std::to_string(i));
        }
        norms[i] = std::sqrt(s);
    }
    DistMatrix m;
    m.n = n;
    m.d.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double dot = 0.0;
            for (std::size_t k = 0; k < vectors[i].size(); ++k) dot += vectors[i][k] * vectors[j][k];
            // rounding can push cos just past 1 for near-identical vectors
            const double dist = std::max(0.0, 1.0 - dot / (norms[i] * norms[j]));
            m.at(i, j) = dist;
            m.at(j, i) = dist;
        }
    }
    return m;
}

DistMatrix euclidean_distance_matrix(const std::vector<std::vector<double>>& points) {
    const std::size_t n = points.size();
    DistMatrix m;
    m.n = n;
    m.d.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < points[i].size(); ++k) {
                const double diff = points[i][k] - points[j][k];
                s += diff * diff;
            }
            const double dist = std::sqrt(s);
            m.at(i, j) = dist;
            m.at(j, i) = dist;
        }
    }
    return m;
}

namespace {

void validate_distances(const DistMatrix& m) {
    if (m.d.size() != m.n * m.n) throw InputError("distance matrix: wrong storage size");
    for (std::size_t i = 0; i < m.n; ++i) {
        if (m.at(i, i) != 0.0) throw InputError("distance matrix: nonzero diagonal");
        for (std::size_t j = 0; j < m.n; ++j) {
            if (m.at(i, j) < 0.0 || !std::isfinite(m.at(i, j))) {
                throw InputError("distance matrix: negative or non-finite entry");
            }
            if (std::fabs(m.at(i, j) - m.at(j, i)) > 1e-12) {
                throw InputError("distance matrix: not symmetric");
            }
        }
    }
}

double raw_stress(const DistMatrix& target, const std::vector<std::vector<double>>& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < target.n; ++i) {
        for (std::size_t j = i + 1; j < target.n; ++j) {
            double dd = 0.0;
            for (std::size_t k = 0; k < x[i].size(); ++k) {
                const double diff = x[i][k] - x[j][k];
                dd += diff * diff;
            }
            const double diff = target.at(i, j) - std::sqrt(dd);
            s += diff * diff;
        }
    }
    return s;
}

}  // namespace

MdsResult mds_embed(const DistMatrix& distances, std::size_t dims, std::size_t max_iter,
                    double tol, std::uint64_t seed) {
    validate_distances(distances);
    const std::size_t n = distances.n;
    if (n == 0) throw InputError("mds_embed: empty distance matrix");

    MdsResult res;
    Rng rng(seed * 0x9e3779b97f4a7c15ull + 11);
    res.points.assign(n, std::vector<double>(dims));
    for (auto& p : res.points)
        for (auto& c : p) c = rng.normal();

    if (n == 1) {
        res.points[0].assign(dims, 0.0);
        res.stress_history.push_back(0.0);
        return res;
    }

    double stress = raw_stress(distances, res.points);
    res.stress_history.push_back(stress);

    std::vector<std::vector<double>> next(n, std::vector<double>(dims));
    for (std::size_t iter = 0; iter < max_iter; ++iter) {
        // Guttman transform: X' = (1/n) B(X) X with b_ij = -delta_ij / d_ij(X).
        for (auto& p : next) std::fill(p.begin(), p.end(), 0.0);
        std::vector<double> bii(n, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                double dd = 0.0;
                for (std::size_t k = 0; k < dims; ++k) {
                    const double diff = res.points[i][k] - res.points[j][k];
                    dd += diff * diff;
                }
                const double dij = std::sqrt(dd);
                const double bij = dij > 0.0 ? -distances.at(i, j) / dij : 0.0;
                bii[i] -= bij;
                for (std::size_t k = 0; k < dims; ++k) next[i][k] += bij * res.points[j][k];
            }
            for (std::size_t k = 0; k < dims; ++k) {
                next[i][k] = (next[i][k] + bii[i] * res.points[i][k]) / static_cast<double>(n);
            }
        }
        res.points.swap(next);
        const double new_stress = raw_stress(distances, res.points);
        res.stress_history.push_back(new_stress);
        if (stress > 0.0 && (stress - new_stress) / stress < tol) {
            stress = new_stress;
            break;
        }
        stress = new_stress;
    }
    return res;
}

std::vector<int> dbscan_from_distances(const DistMatrix& distances, double eps,
                                       std::size_t min_samples) {
    if (eps <= 0.0) throw ConfigError("dbscan: eps must be positive");
    if (min_samples == 0) throw ConfigError("dbscan: min_samples must be >= 1");
    const std::size_t n = distances.n;

    // Neighborhoods include the point itself.
    std::vector<std::vector<std::size_t>> neighbors(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (distances.at(i, j) <= eps) neighbors[i].push_back(j);
        }
    }
    std::vector<bool> core(n);
    for (std::size_t i = 0; i < n; ++i) core[i] = neighbors[i].size() >= min_samples;

    // Clusters are connected components of the core points; a border point
    // joins the cluster of its nearest core neighbor (canonical assignment,
    // independent of point order).
    std::vector<int> labels(n, -1);
    int cluster = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!core[i] || labels[i] != -1) continue;
        std::deque<std::size_t> frontier{i};
        labels[i] = cluster;
        while (!frontier.empty()) {
            const std::size_t p = frontier.front();
            frontier.pop_front();
            for (std::size_t q : neighbors[p]) {
                if (core[q] && labels[q] == -1) {
                    labels[q] = cluster;
                    frontier.push_back(q);
                }
            }
        }
        ++cluster;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (core[i]) continue;
        double best = std::numeric_limits<double>::infinity();
        int best_label = -1;
        for (std::size_t q : neighbors[i]) {
            if (!core[q]) continue;
            const double d = distances.at(i, q);
            if (d < best || (d == best && labels[q] < best_label)) {
                best = d;
                best_label = labels[q];
            }
        }
        labels[i] = best_label;
    }
    return labels;
}

std::vector<int> dbscan(const std::vector<std::vector<double>>& points, double eps,
                        std::size_t min_samples, DbscanMetric metric) {
    const DistMatrix m = metric == DbscanMetric::euclidean ? euclidean_distance_matrix(points)
                                                           : cosine_distance_matrix(points);
    return dbscan_from_distances(m, eps, min_samples);
}

double clustering_accuracy(const std::vector<int>& cluster_ids, const std::vector<int>& domains) {
    if (cluster_ids.size() != domains.size()) {
        throw InputError("clustering_accuracy: id/label length mismatch");
    }
    if (cluster_ids.empty()) return 0.0;
    // Each cluster votes for its majority domain; noise never counts.
    std::map<int, std::pair<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
        if (cluster_ids[i] < 0) continue;
        auto& c = counts[cluster_ids[i]];
        if (domains[i] == 0)
            ++c.first;
        else
            ++c.second;
    }
    std::size_t correct = 0;
    for (const auto& [id, c] : counts) correct += std::max(c.first, c.second);
    return static_cast<double>(correct) / static_cast<double>(cluster_ids.size());
}

double silhouette(const DistMatrix& distances, const std::vector<int>& cluster_ids) {
    if (cluster_ids.size() != distances.n) {
        throw InputError("silhouette: label count does not match distance matrix");
    }
    std::map<int, std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < cluster_ids.size(); ++i) {
        if (cluster_ids[i] >= 0) clusters[cluster_ids[i]].push_back(i);
    }
    if (clusters.size() < 2) {
        throw UndefinedScoreError("silhouette: needs at least 2 clusters, have " +
                                  std::to_string(clusters.size()));
    }
    double total = 0.0;
    std::size_t counted = 0;
    for (const auto& [cid, members] : clusters) {
        for (std::size_t i : members) {
            if (members.size() == 1) {
                ++counted;  // singleton scores 0
                continue;
            }
            double a = 0.0;
            for (std::size_t j : members) {
                if (j != i) a += distances.at(i, j);
            }
            a /= static_cast<double>(members.size() - 1);
            double b = std::numeric_limits<double>::infinity();
            for (const auto& [other_id, other_members] : clusters) {
                if (other_id == cid) continue;
                double mean = 0.0;
                for (std::size_t j : other_members) mean += distances.at(i, j);
                mean /= static_cast<double>(other_members.size());
                b = std::min(b, mean);
            }
            total += (b - a) / std::max(a, b);
            ++counted;
        }
    }
    return total / static_cast<double>(counted);
}

double percentile_distance(const DistMatrix& distances, double percentile) {
    std::vector<double> vals;
    vals.reserve(distances.n * (distances.n - 1) / 2);
    for (std::size_t i = 0; i < distances.n; ++i) {
        for (std::size_t j = i + 1; j < distances.n; ++j) {
            if (distances.at(i, j) > 0.0) vals.push_back(distances.at(i, j));
        }
    }
    if (vals.empty()) throw InputError("percentile_distance: no positive distances");
    std::sort(vals.begin(), vals.end());
    const double idx = percentile / 100.0 * static_cast<double>(vals.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(idx);
    const std::size_t hi = std::min(lo + 1, vals.size() - 1);
    const double frac = idx - static_cast<double>(lo);
    return vals[lo] * (1.0 - frac) + vals[hi] * frac;
}

// ---- integrated gradients ------------------------------------------------------

double IgResult::completeness_residual() const {
    double total = 0.0;
    for (double a : attributions) total += a;
    const double delta = f_input - f_baseline;
    const double denom = std::max(std::fabs(delta), 1e-12);
    return std::fabs(total - delta) / denom;
}

IgResult integrated_gradients(
    const std::function<ad::Tensor(ad::Tape&, const ad::Tensor&)>& make_output,
    const std::vector<double>& input, const std::vector<double>& baseline, ad::Shape shape,
    std::size_t steps) {
    if (steps == 0) throw ContractError("integrated_gradients: steps must be >= 1");
    if (input.size() != baseline.size() || input.size() != ad::numel(shape)) {
        throw DimensionError("integrated_gradients: input/baseline/shape mismatch");
    }
    IgResult res;
    res.attributions.assign(input.size(), 0.0);

    auto evaluate = [&](const std::vector<double>& point, std::vector<double>* grad_out) {
        auto x = ad::Tensor::from(shape, point, true);
        ad::Tape tape;
        auto out = make_output(tape, x);
        const double value = out.item();
        if (grad_out) {
            tape.backward(out);
            *grad_out = x.grad();
        }
        return value;
    };

    res.f_baseline = evaluate(baseline, nullptr);
    std::vector<double> point(input.size());
    std::vector<double> grad;
    for (std::size_t k = 1; k <= steps; ++k) {
        const double t = static_cast<double>(k) / static_cast<double>(steps);
        for (std::size_t i = 0; i < point.size(); ++i) {
            point[i] = baseline[i] + t * (input[i] - baseline[i]);
        }
        const double value = evaluate(point, &grad);
        if (k == steps) res.f_input = value;
        for (std::size_t i = 0; i < point.size(); ++i) res.attributions[i] += grad[i];
    }
    const double inv_m = 1.0 / static_cast<double>(steps);
    for (std::size_t i = 0; i < input.size(); ++i) {
        res.attributions[i] *= inv_m * (input[i] - baseline[i]);
    }
    return res;
}

AttributionReport attribute_example(const ModelBundle& bundle,
                                    const corpus::TokenizedExample& example,
                                    const corpus::Vocabulary& vocab, std::size_t steps) {
    const EncoderConfig& cfg = bundle.config.encoder;
    const std::size_t n = example.input_ids.size();
    const std::size_t h = cfg.hidden_size;
    Rng dummy(0);

    // Predicted span drives the output selectors.
    ad::Tape tape;
    auto f = encode(tape, bundle.params, "mf", cfg, example, false, dummy);
    auto dist = span_distribution(tape, f, bundle.params, "mq");
    const auto& ps = dist.p_start.values();
    const auto& pe = dist.p_end.values();
    AttributionReport report;
    report.predicted_start = std::max_element(ps.begin(), ps.end()) - ps.begin();
    report.predicted_end = std::max_element(pe.begin(), pe.end()) - pe.begin();

    // Input point: the real token embeddings. Baseline: [PAD] embeddings with
    // [CLS]/[SEP] rows kept.
    const auto& table = bundle.params.get("mf.tok_emb");
    std::vector<double> input(n * h), baseline(n * h);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t id = example.input_ids[i];
        const bool structural =
            id == corpus::Vocabulary::kCls || id == corpus::Vocabulary::kSep;
        const std::size_t base_id = structural ? id : corpus::Vocabulary::kPad;
        for (std::size_t j = 0; j < h; ++j) {
            input[i * h + j] = table.at(id, j);
            baseline[i * h + j] = table.at(base_id, j);
        }
    }

    const auto key_valid = key_mask_for(example);
    auto make_selector = [&](bool start_head, std::size_t position) {
        return [&, start_head, position](ad::Tape& t, const ad::Tensor& x) {
            Rng rng(0);
            auto features = encode_from_token_embeddings(t, bundle.params, "mf", cfg, x,
                                                         example.segment_ids, key_valid, false,
                                                         rng);
            const auto& w = bundle.params.get(start_head ? "mq.w_start" : "mq.w_end");
            auto logits = ad::reshape(t, ad::matmul(t, features, w), {features.rows()});
            return ad::pick(t, logits, position);
        };
    };

    auto start_ig = integrated_gradients(make_selector(true, report.predicted_start), input,
                                         baseline, {n, h}, steps);
    auto end_ig = integrated_gradients(make_selector(false, report.predicted_end), input,
                                       baseline, {n, h}, steps);
    report.start_completeness_residual = start_ig.completeness_residual();
    report.end_completeness_residual = end_ig.completeness_residual();

    report.tokens.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        report.tokens[i].token = vocab.token(example.input_ids[i]);
        double s = 0.0, e = 0.0;
        for (std::size_t j = 0; j < h; ++j) {
            s += start_ig.attributions[i * h + j];
            e += end_ig.attributions[i * h + j];
        }
        report.tokens[i].start_attribution = s;
        report.tokens[i].end_attribution = e;
    }
    return report;
}

void write_attribution_csv(const std::string& path, const AttributionReport& report) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write attribution file: " + path);
    out << "token,start_attribution,end_attribution\n";
    char buf[80];
    for (const auto& t : report.tokens) {
        std::snprintf(buf, sizeof buf, ",%.17g,%.17g\n", t.start_attribution,
                      t.end_attribution);
        out << t.token << buf;
    }
}

}  // namespace bioadapt::analysis
