#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "bioadapt/analysis.hpp"
#include "bioadapt/config.hpp"
#include "bioadapt/corpus.hpp"
#include "bioadapt/manifest.hpp"
#include "bioadapt/metrics.hpp"
#include "bioadapt/trainer.hpp"

namespace fs = std::filesystem;
using namespace bioadapt;
using nlohmann::ordered_json;

namespace {

// Exit codes: 0 ok, 2 config error, 3 divergence, 4 artifact mismatch,
// 5 input-reference error, 1 anything else.
int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const SpecError*>(&e)) return 2;
    if (dynamic_cast<const DivergenceError*>(&e)) return 3;
    if (dynamic_cast<const ArtifactError*>(&e)) return 4;
    if (dynamic_cast<const Error*>(&e)) return 5;
    return 1;
}

std::string out_dir_override(const std::string& requested) {
    const char* env = std::getenv("BIOADAPT_OUT");
    return env && *env ? std::string(env) : requested;
}

corpus::CorpusSpec spec_from_config(const KvConfig& kv) {
    corpus::CorpusSpec spec;
    spec.topic_words_per_domain =
        kv.get_uint("topic_words_per_domain", spec.topic_words_per_domain);
    spec.shared_vocab_fraction = kv.get_double("shared_vocab_fraction", spec.shared_vocab_fraction);
    spec.source_labeled = kv.get_uint("source_labeled", spec.source_labeled);
    spec.target_unlabeled = kv.get_uint("target_unlabeled", spec.target_unlabeled);
    spec.target_labeled = kv.get_uint("target_labeled", spec.target_labeled);
    spec.target_test = kv.get_uint("target_test", spec.target_test);
    spec.context_min_tokens = kv.get_uint("context_min_tokens", spec.context_min_tokens);
    spec.context_max_tokens = kv.get_uint("context_max_tokens", spec.context_max_tokens);
    spec.answer_max_words = kv.get_uint("answer_max_words", spec.answer_max_words);
    spec.seed = kv.get_uint("seed", spec.seed);
    return spec;
}

corpus::TokenizerLimits limits_from_config(const KvConfig& kv) {
    corpus::TokenizerLimits limits;
    limits.max_query_length = kv.get_uint("max_query_length", limits.max_query_length);
    limits.max_answer_length = kv.get_uint("max_answer_length", limits.max_answer_length);
    limits.max_sequence_length = kv.get_uint("max_sequence_length", limits.max_sequence_length);
    limits.doc_stride = kv.get_uint("doc_stride", limits.doc_stride);
    limits.mask_segment_id = kv.get_uint("mask_segment_id", limits.mask_segment_id);
    return limits;
}

ModelConfig model_config_from(const KvConfig& kv, std::size_t vocab_size) {
    ModelConfig cfg;
    cfg.encoder.num_layers = kv.get_uint("num_layers", cfg.encoder.num_layers);
    cfg.encoder.hidden_size = kv.get_uint("hidden_size", cfg.encoder.hidden_size);
    cfg.encoder.num_heads = kv.get_uint("num_heads", cfg.encoder.num_heads);
    cfg.encoder.ffn_inner_size = kv.get_uint("ffn_inner_size", cfg.encoder.ffn_inner_size);
    cfg.encoder.dropout_rate = kv.get_double("dropout_rate", cfg.encoder.dropout_rate);
    cfg.encoder.max_positions = kv.get_uint("max_positions", cfg.encoder.max_positions);
    cfg.encoder.vocab_size = vocab_size;
    cfg.margin = kv.get_double("margin", cfg.margin);
    cfg.max_answer_length = kv.get_uint("max_answer_length", cfg.max_answer_length);
    cfg.n_best = kv.get_uint("n_best", cfg.n_best);
    return cfg;
}

TrainConfig train_config_from(const KvConfig& kv) {
    TrainConfig cfg;
    cfg.learning_rate = kv.get_double("learning_rate", cfg.learning_rate);
    cfg.batch_triplets = kv.get_uint("batch_triplets", cfg.batch_triplets);
    cfg.epochs = kv.get_uint("epochs", cfg.epochs);
    cfg.steps_per_epoch = kv.get_uint("steps_per_epoch", cfg.steps_per_epoch);
    cfg.lambda_schedule.start = kv.get_double("lambda_start", cfg.lambda_schedule.start);
    cfg.lambda_schedule.increment =
        kv.get_double("lambda_increment", cfg.lambda_schedule.increment);
    cfg.lambda_schedule.every_epochs =
        kv.get_uint("lambda_every_epochs", cfg.lambda_schedule.every_epochs);
    cfg.lambda_schedule.cap = kv.get_double("lambda_cap", cfg.lambda_schedule.cap);
    cfg.seed = kv.get_uint("seed", cfg.seed);
    const std::string kind = kv.get_string("loss_kind", "triplet");
    if (kind == "triplet") {
        cfg.loss_kind = LossKind::triplet;
    } else if (kind == "distance") {
        cfg.loss_kind = LossKind::distance;
    } else {
        throw ConfigError("loss_kind must be triplet or distance, got " + kind);
    }
    cfg.aux_enabled = kv.get_bool("aux_enabled", cfg.aux_enabled);
    cfg.discriminator_enabled = kv.get_bool("discriminator_enabled", cfg.discriminator_enabled);
    cfg.labeled_target_ratio = kv.get_double("labeled_target_ratio", cfg.labeled_target_ratio);
    const std::string scope = kv.get_string("grl_scope", "full_L_D");
    if (scope == "full_L_D") {
        cfg.grl_scope = GrlScope::full_L_D;
    } else if (scope == "triplet_only") {
        cfg.grl_scope = GrlScope::triplet_only;
    } else {
        throw ConfigError("grl_scope must be full_L_D or triplet_only, got " + scope);
    }
    cfg.train_dropout = kv.get_bool("train_dropout", cfg.train_dropout);
    cfg.divergence_limit = kv.get_double("divergence_limit", cfg.divergence_limit);
    cfg.trace_vectors = kv.get_bool("trace_vectors", cfg.trace_vectors);
    cfg.eval_final = kv.get_bool("eval_final", cfg.eval_final);
    return cfg;
}

ordered_json config_echo(const KvConfig& kv) {
    ordered_json j;
    for (const auto& [k, v] : kv.all()) j[k] = v;
    return j;
}

ordered_json report_to_json(const TrainReport& report, const KvConfig& kv, std::uint64_t seed,
                            const std::string& trace_path) {
    ordered_json j;
    j["seed"] = seed;
    j["config"] = config_echo(kv);
    j["diverged"] = report.diverged;
    if (report.diverged) j["divergence_message"] = report.divergence_message;
    ordered_json epochs = ordered_json::array();
    for (const auto& e : report.epochs) {
        ordered_json ej;
        ej["epoch"] = e.epoch;
        ej["lambda"] = e.lambda;
        ej["loss_q"] = e.mean_loss_q;
        ej["loss_d"] = e.mean_loss_d;
        ej["loss_total"] = e.mean_loss_total;
        if (e.mean_d_source_source) {
            ej["d_source_source"] = *e.mean_d_source_source;
            ej["d_source_target"] = *e.mean_d_source_target;
        }
        epochs.push_back(ej);
    }
    j["epochs"] = epochs;
    j["lambda_trace"] = [&] {
        ordered_json arr = ordered_json::array();
        for (const auto& e : report.epochs) arr.push_back(e.lambda);
        return arr;
    }();
    if (!trace_path.empty()) j["distance_trace_csv"] = trace_path;
    if (report.final_metrics) {
        const auto& m = *report.final_metrics;
        ordered_json mj;
        mj["sacc"] = m.sacc;
        mj["lacc"] = m.lacc;
        mj["mrr"] = m.mrr;
        if (m.em) mj["em"] = *m.em;
        if (m.f1) mj["f1"] = *m.f1;
        mj["n_test"] = m.n_test;
        j["final_metrics"] = mj;
    }
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write " + path);
    out << text;
}

void write_distance_trace_csv(const std::string& path, const TrainReport& report,
                              const std::string& loss_kind) {
    std::ostringstream os;
    os << "epoch,mean_d_source_source,mean_d_source_target,loss_kind\n";
    char buf[80];
    for (const auto& e : report.epochs) {
        if (!e.mean_d_source_source) continue;
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,", e.epoch, *e.mean_d_source_source,
                      *e.mean_d_source_target);
        os << buf << loss_kind << "\n";
    }
    write_text(path, os.str());
}

void write_cls_vectors_csv(const std::string& path, const TrainReport& report) {
    std::ostringstream os;
    os << "epoch,triplet,role,values\n";
    char buf[40];
    for (std::size_t e = 0; e < report.epoch_cls.size(); ++e) {
        for (std::size_t t = 0; t < report.epoch_cls[e].size(); ++t) {
            const auto& triple = report.epoch_cls[e][t];
            const std::pair<const char*, const std::vector<double>*> rows[] = {
                {"anchor", &triple.anchor},
                {"positive", &triple.positive},
                {"target", &triple.target}};
            for (const auto& [role, vec] : rows) {
                os << e << ',' << t << ',' << role;
                for (double v : *vec) {
                    std::snprintf(buf, sizeof buf, ";%.17g", v);
                    os << buf;
                }
                os << "\n";
            }
        }
    }
    write_text(path, os.str());
}

struct LoadedData {
    corpus::Vocabulary vocab;
    std::vector<corpus::RawExample> source_train, target_train, target_test;
};

LoadedData load_data_dir(const std::string& dir) {
    LoadedData d;
    d.vocab = corpus::Vocabulary::load(dir + "/vocab.json");
    d.source_train = corpus::read_jsonl(dir + "/source_train.jsonl");
    d.target_train = corpus::read_jsonl(dir + "/target_train.jsonl");
    const std::string test_path = dir + "/target_test.jsonl";
    if (fs::exists(test_path)) d.target_test = corpus::read_jsonl(test_path);
    return d;
}

// ---- subcommands ------------------------------------------------------------

int cmd_gen_corpus(const std::string& spec_path, const std::string& out_dir_arg) {
    const std::string out_dir = out_dir_override(out_dir_arg);
    const KvConfig kv = KvConfig::parse_file(spec_path);
    const corpus::CorpusSpec spec = spec_from_config(kv);
    const auto generated = corpus::generate_corpus(spec);  // throws before anything is written

    fs::create_directories(out_dir);
    corpus::write_jsonl(out_dir + "/source_train.jsonl", generated.source_train);
    corpus::write_jsonl(out_dir + "/target_train.jsonl", generated.target_train);
    corpus::write_jsonl(out_dir + "/target_test.jsonl", generated.target_test);
    generated.vocab.save(out_dir + "/vocab.json");
    std::vector<metrics::GoldenAnswer> golds;
    for (const auto& e : generated.target_test) {
        if (e.labeled()) golds.push_back({e.id, *e.answer_text});
    }
    metrics::write_golds(out_dir + "/target_test_gold.jsonl", golds);

    RunManifest manifest;
    manifest.command = "gen-corpus";
    manifest.config_path = spec_path;
    manifest.seeds = {spec.seed};
    manifest.input_paths = {spec_path};
    for (const char* f : {"source_train.jsonl", "target_train.jsonl", "target_test.jsonl",
                          "vocab.json", "target_test_gold.jsonl"}) {
        manifest.add_artifact(out_dir + "/" + f);
    }
    manifest.write(out_dir + "/manifest.json");
    std::cout << "wrote corpus (" << generated.source_train.size() << " source, "
              << generated.target_train.size() << " target-train, "
              << generated.target_test.size() << " target-test) to " << out_dir << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir_arg, const std::string& mode,
              const std::string& seeds_arg, double ratio_override) {
    const std::string out_dir = out_dir_override(out_dir_arg);
    KvConfig kv = KvConfig::parse_file(config_path);

    // --mode maps onto the ablation/variant flags
    if (mode == "baseline") {
        kv.set("discriminator_enabled", "false");
    } else if (mode == "no-aux") {
        kv.set("discriminator_enabled", "true");
        kv.set("aux_enabled", "false");
    } else if (mode == "full") {
        kv.set("discriminator_enabled", "true");
        kv.set("aux_enabled", "true");
        kv.set("loss_kind", "triplet");
    } else if (mode == "distance") {
        kv.set("discriminator_enabled", "true");
        kv.set("loss_kind", "distance");
    } else if (!mode.empty()) {
        throw ConfigError("unknown --mode: " + mode);
    }
    if (ratio_override >= 0.0) kv.set("labeled_target_ratio", std::to_string(ratio_override));

    std::vector<std::uint64_t> seeds;
    if (!seeds_arg.empty()) {
        std::stringstream ss(seeds_arg);
        std::string item;
        while (std::getline(ss, item, ',')) seeds.push_back(std::stoull(item));
    }

    const LoadedData data = load_data_dir(data_dir);
    const corpus::TokenizerLimits limits = limits_from_config(kv);
    const TrainConfig base_cfg = train_config_from(kv);
    const ModelConfig model_cfg = model_config_from(kv, data.vocab.size());
    if (seeds.empty()) seeds = {base_cfg.seed};

    fs::create_directories(out_dir);
    RunManifest manifest;
    manifest.command = "train";
    manifest.config_path = config_path;
    manifest.seeds = seeds;
    manifest.input_paths = {data_dir};

    const std::string kind_name =
        base_cfg.loss_kind == LossKind::triplet ? "triplet" : "distance";
    std::vector<metrics::MetricReport> all_metrics;
    bool any_diverged = false;
    for (std::uint64_t seed : seeds) {
        TrainConfig cfg = base_cfg;
        cfg.seed = seed;
        const TrainData train_data =
            build_train_data(data.source_train, data.target_train, data.target_test, data.vocab,
                             limits, cfg.labeled_target_ratio, cfg.seed);
        ModelBundle bundle = init_model(model_cfg, seed);
        TrainReport report = run_experiment(bundle, train_data, cfg);
        any_diverged = any_diverged || report.diverged;

        const std::string tag = "_seed" + std::to_string(seed);
        const std::string ckpt = out_dir + "/checkpoint" + tag + ".ckpt";
        save_checkpoint(ckpt, bundle);
        manifest.add_artifact(ckpt);
        std::string trace_path;
        if (cfg.discriminator_enabled) {
            trace_path = out_dir + "/distance_trace" + tag + ".csv";
            write_distance_trace_csv(trace_path, report, kind_name);
            manifest.add_artifact(trace_path);
        }
        if (cfg.trace_vectors) {
            const std::string cls_path = out_dir + "/cls_vectors" + tag + ".csv";
            write_cls_vectors_csv(cls_path, report);
            manifest.add_artifact(cls_path);
        }
        const std::string report_path = out_dir + "/report" + tag + ".json";
        write_text(report_path, report_to_json(report, kv, seed, trace_path).dump(2) + "\n");
        manifest.add_artifact(report_path);
        if (report.final_metrics) all_metrics.push_back(*report.final_metrics);
        std::cout << "seed " << seed << ": "
                  << (report.diverged ? "DIVERGED" : "completed");
        if (report.final_metrics) {
            char buf[96];
            std::snprintf(buf, sizeof buf, " (SAcc %.4f, LAcc %.4f, MRR %.4f)",
                          report.final_metrics->sacc, report.final_metrics->lacc,
                          report.final_metrics->mrr);
            std::cout << buf;
        }
        std::cout << "\n";
    }

    if (all_metrics.size() > 1) {
        auto mean_std = [&](auto getter) {
            double mean = 0.0;
            for (const auto& m : all_metrics) mean += getter(m);
            mean /= static_cast<double>(all_metrics.size());
            double var = 0.0;
            for (const auto& m : all_metrics) {
                const double d = getter(m) - mean;
                var += d * d;
            }
            var /= static_cast<double>(all_metrics.size());
            return std::pair<double, double>{mean, std::sqrt(var)};
        };
        ordered_json summary;
        summary["seeds"] = seeds;
        for (const auto& [name, getter] :
             std::vector<std::pair<std::string, std::function<double(const metrics::MetricReport&)>>>{
                 {"sacc", [](const auto& m) { return m.sacc; }},
                 {"lacc", [](const auto& m) { return m.lacc; }},
                 {"mrr", [](const auto& m) { return m.mrr; }},
                 {"em", [](const auto& m) { return m.em.value_or(0.0); }},
                 {"f1", [](const auto& m) { return m.f1.value_or(0.0); }}}) {
            auto [mean, sd] = mean_std(getter);
            summary[name] = {{"mean", mean}, {"std", sd}};
        }
        const std::string summary_path = out_dir + "/summary.json";
        write_text(summary_path, summary.dump(2) + "\n");
        manifest.add_artifact(summary_path);
    }
    manifest.write(out_dir + "/manifest.json");
    if (any_diverged) throw DivergenceError("at least one seed diverged; failure report retained");
    return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& gold_path, const std::string& gold_format,
             const std::string& vocab_path, const std::string& out_dir_arg) {
    const std::string out_dir = out_dir_override(out_dir_arg);
    ModelBundle bundle = load_checkpoint(ckpt_path);
    const corpus::Vocabulary vocab = corpus::Vocabulary::load(vocab_path);
    if (vocab.size() != bundle.config.encoder.vocab_size) {
        throw ArtifactError("checkpoint vocabulary size " +
                            std::to_string(bundle.config.encoder.vocab_size) +
                            " does not match vocabulary file (" + std::to_string(vocab.size()) +
                            ")");
    }
    const auto raw = corpus::read_jsonl(data_path);
    corpus::TokenizerLimits limits;
    limits.max_answer_length = bundle.config.max_answer_length;
    std::vector<corpus::TokenizedExample> windows;
    std::set<std::string> known_ids;
    for (const auto& ex : raw) {
        known_ids.insert(ex.id);
        for (auto& w : corpus::tokenize_raw(ex, vocab, limits)) windows.push_back(std::move(w));
    }

    std::vector<metrics::GoldenAnswer> golds;
    if (gold_format == "jsonl") {
        golds = metrics::read_golds(gold_path);
    } else if (gold_format == "bioasq") {
        golds = metrics::read_bioasq_golds(gold_path);
    } else {
        throw ConfigError("unknown --gold-format: " + gold_format);
    }
    std::vector<metrics::GoldenAnswer> usable;
    std::size_t skipped = 0;
    for (auto& g : golds) {
        if (known_ids.count(g.id)) {
            usable.push_back(g);
        } else {
            ++skipped;
            std::cerr << "warning: gold id not in dataset, excluded: " << g.id << "\n";
        }
    }
    if (usable.empty()) throw InputError("no gold answers match the dataset ids");

    auto predictions = predict_dataset(bundle, windows);
    auto report = metrics::compute_metrics(predictions, usable);

    fs::create_directories(out_dir);
    metrics::write_predictions(out_dir + "/predictions.jsonl", predictions);
    metrics::write_report(out_dir + "/metrics.json", report);
    RunManifest manifest;
    manifest.command = "eval";
    manifest.input_paths = {ckpt_path, data_path, gold_path, vocab_path};
    manifest.add_artifact(out_dir + "/predictions.jsonl");
    manifest.add_artifact(out_dir + "/metrics.json");
    manifest.write(out_dir + "/manifest.json");
    std::cout << metrics::format_report_table(report);
    if (skipped) std::cout << "excluded gold ids: " << skipped << "\n";
    return 0;
}

struct FrameStats {
    std::vector<double> accuracy, dbscan_silhouette, domain_silhouette;
    std::vector<std::size_t> n_clusters;
};

ordered_json stats_to_json(const FrameStats& s) {
    auto mean_std = [](const std::vector<double>& v) {
        ordered_json j;
        if (v.empty()) return j;
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        var /= static_cast<double>(v.size());
        j["mean"] = mean;
        j["std"] = std::sqrt(var);
        j["samples"] = v;
        return j;
    };
    ordered_json j;
    j["accuracy"] = mean_std(s.accuracy);
    j["domain_silhouette"] = mean_std(s.domain_silhouette);
    if (!s.dbscan_silhouette.empty()) j["dbscan_silhouette"] = mean_std(s.dbscan_silhouette);
    j["n_clusters"] = s.n_clusters;
    return j;
}

int cmd_analyze(const std::vector<std::string>& ckpt_paths, const std::string& source_path,
                const std::string& target_path, const std::string& vocab_path,
                const std::string& out_dir_arg, std::size_t repeats, const std::string& eps_arg,
                std::size_t min_samples, std::uint64_t seed, double eps_percentile) {
    const std::string out_dir = out_dir_override(out_dir_arg);
    const corpus::Vocabulary vocab = corpus::Vocabulary::load(vocab_path);
    const auto source_raw = corpus::read_jsonl(source_path);
    const auto target_raw = corpus::read_jsonl(target_path);
    if (source_raw.empty() || target_raw.empty()) {
        throw InputError("analysis needs both source and target examples");
    }
    corpus::TokenizerLimits limits;

    fs::create_directories(out_dir);
    RunManifest manifest;
    manifest.command = "analyze";
    manifest.seeds = {seed};
    manifest.input_paths = {source_path, target_path, vocab_path};
    for (const auto& p : ckpt_paths) manifest.input_paths.push_back(p);

    ordered_json report;
    report["repeats"] = repeats;
    report["min_samples"] = min_samples;

    // eps resolved on the first checkpoint's frames and reused, so the
    // clustering hyperparameters are identical across compared models
    std::vector<double> resolved_eps(repeats, 0.0);
    bool eps_fixed = eps_arg != "auto";
    if (eps_fixed) {
        const double v = std::stod(eps_arg);
        std::fill(resolved_eps.begin(), resolved_eps.end(), v);
    }

    for (std::size_t c = 0; c < ckpt_paths.size(); ++c) {
        ModelBundle bundle = load_checkpoint(ckpt_paths[c]);
        if (vocab.size() != bundle.config.encoder.vocab_size) {
            throw ArtifactError("checkpoint/vocabulary size mismatch for " + ckpt_paths[c]);
        }
        // tokenize every example once (first window represents the example)
        auto first_windows = [&](const std::vector<corpus::RawExample>& raws) {
            std::vector<corpus::TokenizedExample> ws;
            for (const auto& r : raws) {
                auto all = corpus::tokenize_raw(r, vocab, limits);
                ws.push_back(std::move(all.front()));
            }
            return ws;
        };
        const auto src_windows = first_windows(source_raw);
        const auto tgt_windows = first_windows(target_raw);
        const auto src_cls = extract_cls(bundle, src_windows);
        const auto tgt_cls = extract_cls(bundle, tgt_windows);

        FrameStats stats;
        Rng rng(seed * 7919 + 1);
        const std::string tag = "model" + std::to_string(c);
        for (std::size_t rep = 0; rep < repeats; ++rep) {
            // subsample the larger side to the smaller side's size
            const std::size_t k = std::min(src_cls.size(), tgt_cls.size());
            auto pick_k = [&](const std::vector<std::vector<double>>& v) {
                std::vector<std::size_t> idx(v.size());
                for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
                for (std::size_t i = idx.size(); i > 1; --i) {
                    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
                }
                std::vector<std::vector<double>> out;
                for (std::size_t i = 0; i < k; ++i) out.push_back(v[idx[i]]);
                return out;
            };
            auto src_sample = pick_k(src_cls);
            auto tgt_sample = pick_k(tgt_cls);
            analysis::AnalysisFrame frame;
            for (auto& v : src_sample) {
                frame.vectors.push_back(std::move(v));
                frame.domains.push_back(0);
            }
            for (auto& v : tgt_sample) {
                frame.vectors.push_back(std::move(v));
                frame.domains.push_back(1);
            }

            auto cos_d = analysis::cosine_distance_matrix(frame.vectors);
            auto mds = analysis::mds_embed(cos_d, 2, 300, 1e-6, seed + rep);
            if (rep == 0) {
                std::ostringstream os;
                os << "x,y,domain\n";
                char buf[80];
                for (std::size_t i = 0; i < mds.points.size(); ++i) {
                    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%s\n", mds.points[i][0],
                                  mds.points[i][1], frame.domains[i] == 0 ? "source" : "target");
                    os << buf;
                }
                write_text(out_dir + "/mds_coords_" + tag + ".csv", os.str());
                manifest.add_artifact(out_dir + "/mds_coords_" + tag + ".csv");
            }

            auto euc = analysis::euclidean_distance_matrix(mds.points);
            if (!eps_fixed && c == 0) {
                resolved_eps[rep] = analysis::percentile_distance(euc, eps_percentile);
            }
            auto labels = analysis::dbscan_from_distances(euc, resolved_eps[rep], min_samples);
            stats.accuracy.push_back(analysis::clustering_accuracy(labels, frame.domains));
            std::set<int> uniq(labels.begin(), labels.end());
            uniq.erase(-1);
            stats.n_clusters.push_back(uniq.size());
            try {
                stats.dbscan_silhouette.push_back(analysis::silhouette(euc, labels));
            } catch (const UndefinedScoreError&) {
                // fewer than two clusters; only the domain silhouette is defined
            }
            stats.domain_silhouette.push_back(analysis::silhouette(euc, frame.domains));
        }
        ordered_json cj = stats_to_json(stats);
        cj["checkpoint"] = ckpt_paths[c];
        cj["eps"] = resolved_eps;
        report["models"].push_back(cj);
    }

    write_text(out_dir + "/cluster_report.json", report.dump(2) + "\n");
    manifest.add_artifact(out_dir + "/cluster_report.json");
    manifest.write(out_dir + "/manifest.json");
    std::cout << report.dump(2) << "\n";
    return 0;
}

int cmd_attribute(const std::string& ckpt_path, const std::string& data_path,
                  const std::string& vocab_path, const std::string& example_id,
                  std::size_t steps, const std::string& out_dir_arg) {
    const std::string out_dir = out_dir_override(out_dir_arg);
    ModelBundle bundle = load_checkpoint(ckpt_path);
    const corpus::Vocabulary vocab = corpus::Vocabulary::load(vocab_path);
    if (vocab.size() != bundle.config.encoder.vocab_size) {
        throw ArtifactError("checkpoint/vocabulary size mismatch");
    }
    const auto raw = corpus::read_jsonl(data_path);
    const corpus::RawExample* found = nullptr;
    for (const auto& ex : raw) {
        if (ex.id == example_id) {
            found = &ex;
            break;
        }
    }
    if (!found) throw InputError("example id not found in dataset: " + example_id);
    corpus::TokenizerLimits limits;
    auto windows = corpus::tokenize_raw(*found, vocab, limits);
    auto report = analysis::attribute_example(bundle, windows.front(), vocab, steps);

    fs::create_directories(out_dir);
    const std::string csv = out_dir + "/attribution_" + example_id + ".csv";
    analysis::write_attribution_csv(csv, report);
    ordered_json j;
    j["example_id"] = example_id;
    j["steps"] = steps;
    j["predicted_start"] = report.predicted_start;
    j["predicted_end"] = report.predicted_end;
    j["start_completeness_residual"] = report.start_completeness_residual;
    j["end_completeness_residual"] = report.end_completeness_residual;
    write_text(out_dir + "/attribution_" + example_id + ".json", j.dump(2) + "\n");
    RunManifest manifest;
    manifest.command = "attribute";
    manifest.input_paths = {ckpt_path, data_path, vocab_path};
    manifest.add_artifact(csv);
    manifest.add_artifact(out_dir + "/attribution_" + example_id + ".json");
    manifest.write(out_dir + "/manifest.json");
    std::cout << "attribution rows: " << report.tokens.size()
              << ", completeness residual (start): " << report.start_completeness_residual
              << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"BioADAPT-MRC style adversarial domain adaptation for extractive MRC"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, data_dir, mode, seeds_arg;
    std::string ckpt, data_path, gold_path, vocab_path, example_id, eps_arg = "auto";
    std::string gold_format = "jsonl";
    std::vector<std::string> ckpts;
    std::size_t repeats = 5, min_samples = 20, steps = 64;
    std::uint64_t seed = 7;
    double ratio_override = -1.0, eps_percentile = 10.0;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic two-domain corpus");
    gen->add_option("--spec", spec_path, "corpus spec (key=value)")->required();
    gen->add_option("--out", out_dir, "output directory")->required();

    auto* train = app.add_subcommand("train", "train a model (baseline or adversarial)");
    train->add_option("--config", config_path, "training config (key=value)")->required();
    train->add_option("--data", data_dir, "corpus directory")->required();
    train->add_option("--out", out_dir, "output directory")->required();
    train->add_option("--mode", mode, "baseline | no-aux | full | distance");
    train->add_option("--seeds", seeds_arg, "comma-separated seeds, e.g. 10,42,2018");
    train->add_option("--labeled-target-ratio", ratio_override,
                      "override the semi-supervised ratio");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test set");
    eval->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    eval->add_option("--data", data_path, "test dataset jsonl")->required();
    eval->add_option("--gold", gold_path, "gold answers file")->required();
    eval->add_option("--gold-format", gold_format, "jsonl | bioasq");
    eval->add_option("--vocab", vocab_path, "vocabulary file")->required();
    eval->add_option("--out", out_dir, "output directory")->required();

    auto* analyze = app.add_subcommand("analyze", "MDS + DBSCAN + silhouette domain analysis");
    analyze->add_option("--checkpoints", ckpts, "checkpoints to compare (baseline first)")
        ->required()
        ->expected(1, 8);
    analyze->add_option("--source", data_path, "source dataset jsonl")->required();
    analyze->add_option("--target", gold_path, "target dataset jsonl")->required();
    analyze->add_option("--vocab", vocab_path, "vocabulary file")->required();
    analyze->add_option("--out", out_dir, "output directory")->required();
    analyze->add_option("--repeats", repeats, "resample repetitions");
    analyze->add_option("--eps", eps_arg, "DBSCAN eps, or 'auto'");
    analyze->add_option("--eps-percentile", eps_percentile, "percentile for auto eps");
    analyze->add_option("--min-samples", min_samples, "DBSCAN min_samples");
    analyze->add_option("--seed", seed, "resampling seed");

    auto* attribute = app.add_subcommand("attribute", "integrated-gradients word importance");
    attribute->add_option("--checkpoint", ckpt, "checkpoint file")->required();
    attribute->add_option("--data", data_path, "dataset jsonl")->required();
    attribute->add_option("--vocab", vocab_path, "vocabulary file")->required();
    attribute->add_option("--id", example_id, "example id to attribute")->required();
    attribute->add_option("--steps", steps, "interpolation steps");
    attribute->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_corpus(spec_path, out_dir);
        if (train->parsed())
            return cmd_train(config_path, data_dir, out_dir, mode, seeds_arg, ratio_override);
        if (eval->parsed())
            return cmd_eval(ckpt, data_path, gold_path, gold_format, vocab_path, out_dir);
        if (analyze->parsed())
            return cmd_analyze(ckpts, data_path, gold_path, vocab_path, out_dir, repeats,
                               eps_arg, min_samples, seed, eps_percentile);
        if (attribute->parsed())
            return cmd_attribute(ckpt, data_path, vocab_path, example_id, steps, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    }
    return 1;
}
