#include "bioadapt/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "bioadapt/encoder.hpp"

namespace bioadapt {

using ad::Tape;
using ad::Tensor;

double lambda_at(std::size_t epoch, const LambdaSchedule& schedule) {
    if (schedule.every_epochs == 0) throw ConfigError("lambda schedule: every_epochs must be > 0");
    const double steps = static_cast<double>(epoch / schedule.every_epochs);
    const double value = schedule.start + schedule.increment * steps;
    return std::min(schedule.cap, std::max(0.0, value));
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train config: learning rate must be positive");
    if (batch_triplets == 0) throw ConfigError("train config: batch size must be positive");
    if (labeled_target_ratio < 0.0 || labeled_target_ratio > 1.0) {
        throw ConfigError("train config: labeled_target_ratio must lie in [0,1]");
    }
    if (lambda_schedule.start < 0.0 || lambda_schedule.cap < 0.0) {
        throw ConfigError("train config: lambda schedule must be non-negative");
    }
}

TrainData build_train_data(const std::vector<corpus::RawExample>& source_train,
                           const std::vector<corpus::RawExample>& target_train,
                           const std::vector<corpus::RawExample>& target_test,
                           const corpus::Vocabulary& vocab, const corpus::TokenizerLimits& limits,
                           double labeled_target_ratio, std::uint64_t seed) {
    TrainData data;
    for (const auto& raw : source_train) {
        for (auto& w : corpus::tokenize_raw(raw, vocab, limits)) {
            if (w.is_labeled) data.source_anchor_pool.push_back(data.source_units.size());
            data.source_units.push_back(std::move(w));
        }
    }

    // Decide which target-train examples keep their labels.
    const std::size_t want_labeled = static_cast<std::size_t>(
        labeled_target_ratio * static_cast<double>(target_train.size()) + 0.5);
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < target_train.size(); ++i) {
        if (target_train[i].labeled()) candidates.push_back(i);
    }
    if (want_labeled > candidates.size()) {
        throw ConfigError("labeled_target_ratio requests " + std::to_string(want_labeled) +
                          " labeled target examples but the dataset provides only " +
                          std::to_string(candidates.size()));
    }
    Rng rng(seed * 0x9e3779b97f4a7c15ull + 3);
    for (std::size_t i = candidates.size(); i > 1; --i) {
        std::swap(candidates[i - 1], candidates[rng.uniform_index(i)]);
    }
    std::vector<bool> keep_label(target_train.size(), false);
    for (std::size_t i = 0; i < want_labeled; ++i) keep_label[candidates[i]] = true;

    for (std::size_t i = 0; i < target_train.size(); ++i) {
        corpus::RawExample raw = target_train[i];
        if (!keep_label[i]) {
            raw.question.reset();
            raw.answer_text.reset();
            raw.answer_start_char.reset();
        }
        for (auto& w : corpus::tokenize_raw(raw, vocab, limits)) {
            data.target_units.push_back(std::move(w));
        }
    }

    for (const auto& raw : target_test) {
        for (auto& w : corpus::tokenize_raw(raw, vocab, limits)) {
            data.test_windows.push_back(std::move(w));
        }
        if (raw.labeled()) data.golds.push_back({raw.id, *raw.answer_text});
    }
    return data;
}

std::vector<TripletIndices> sample_step(const TrainData& data, Rng& rng, std::size_t count,
                                        bool anchors_need_labels) {
    const std::size_t n_source = data.source_units.size();
    if (n_source < 2) {
        throw SamplingError("sample_step: need at least 2 source examples, have " +
                            std::to_string(n_source));
    }
    if (data.target_units.empty()) {
        throw SamplingError("sample_step: target set is empty");
    }
    if (anchors_need_labels && data.source_anchor_pool.empty()) {
        throw SamplingError("sample_step: no labeled source examples to anchor on");
    }
    std::vector<TripletIndices> batch;
    batch.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        TripletIndices trip{};
        trip.anchor = anchors_need_labels
                          ? data.source_anchor_pool[rng.uniform_index(
                                data.source_anchor_pool.size())]
                          : rng.uniform_index(n_source);
        do {
            trip.positive = rng.uniform_index(n_source);
        } while (trip.positive == trip.anchor);
        trip.target = rng.uniform_index(data.target_units.size());
        batch.push_back(trip);
    }
    return batch;
}

void Adam::step(ParamStore& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : params.all()) {
        auto& [m, v] = moments_[name];
        if (m.empty()) {
            m.assign(p.size(), 0.0);
            v.assign(p.size(), 0.0);
        }
        auto& g = p.grad();
        auto& x = p.values();
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            x[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

namespace {

Tensor mean_of(Tape& tape, const std::vector<Tensor>& terms) {
    Tensor acc = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(tape, acc, terms[i]);
    return ad::scale(tape, acc, 1.0 / static_cast<double>(terms.size()));
}

void check_finite_loss(double value, double limit, const char* what) {
    if (!std::isfinite(value) || std::fabs(value) > limit) {
        throw DivergenceError(std::string(what) + " diverged: " + std::to_string(value));
    }
}

}  // namespace

StepStats train_step(ModelBundle& bundle, const TrainData& data,
                     const std::vector<TripletIndices>& batch, const TrainConfig& cfg,
                     TrainState& state) {
    if (batch.empty()) throw ContractError("train_step: empty batch");
    const double lambda = state.lambda;
    if (lambda < 0.0) throw ConfigError("train_step: lambda must be non-negative");
    const EncoderConfig& enc = bundle.config.encoder;
    const bool train_flag = cfg.train_dropout;

    Tape tape;
    std::vector<Tensor> lq_terms;
    std::vector<Tensor> ld_terms;
    StepStats stats;

    struct EncodedTriplet {
        Tensor f_anchor, f_positive, f_target;
        const corpus::TokenizedExample* anchor;
    };
    std::vector<EncodedTriplet> encoded;
    encoded.reserve(batch.size());

    // L_Q over every labeled member: source anchors and positives always, the
    // triplet's target member when the semi-supervised split labeled it.
    for (const auto& trip : batch) {
        const auto& ex_a = data.source_units[trip.anchor];
        const auto& ex_p = data.source_units[trip.positive];
        const auto& ex_t = data.target_units[trip.target];
        EncodedTriplet et;
        et.f_anchor = encode(tape, bundle.params, "mf", enc, ex_a, train_flag, state.dropout_rng);
        et.f_positive =
            encode(tape, bundle.params, "mf", enc, ex_p, train_flag, state.dropout_rng);
        et.f_target = encode(tape, bundle.params, "mf", enc, ex_t, train_flag, state.dropout_rng);
        et.anchor = &ex_a;

        auto add_lq = [&](const corpus::TokenizedExample& ex, const Tensor& f) {
            if (!ex.is_labeled) return;
            auto dist = span_distribution(tape, f, bundle.params, "mq");
            lq_terms.push_back(mrc_loss(tape, dist, *ex.answer_start, *ex.answer_end));
        };
        add_lq(ex_a, et.f_anchor);
        add_lq(ex_p, et.f_positive);
        add_lq(ex_t, et.f_target);
        encoded.push_back(std::move(et));
    }

    // Discriminator branch: features pass through gradient reversal, so one
    // backward pass descends L_D for D while M_F receives -lambda * dL_D/df.
    if (cfg.discriminator_enabled) {
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& trip = batch[i];
            auto& et = encoded[i];
            const auto& ex_a = data.source_units[trip.anchor];

            DomainTriplet dt;
            dt.f_target = ad::gradient_reversal(tape, et.f_target, lambda);
            dt.f_source_anchor = ad::gradient_reversal(tape, et.f_anchor, lambda);
            dt.f_source_positive = ad::gradient_reversal(tape, et.f_positive, lambda);
            if (ex_a.is_labeled) dt.anchor_golden = {{*ex_a.answer_start, *ex_a.answer_end}};

            Tensor ld;
            DiscriminatorOutput out;
            if (cfg.grl_scope == GrlScope::full_L_D || !cfg.aux_enabled) {
                ld = discriminator_loss(tape, bundle.params, bundle.config, dt, cfg.loss_kind,
                                        cfg.aux_enabled, train_flag, state.dropout_rng, &out);
            } else {
                // triplet_only: the [CLS] branch is reversed, the auxiliary MRC
                // branch reaches M_F unreversed through a second D_e application.
                out = discriminate(tape, bundle.params, enc, dt, train_flag, state.dropout_rng);
                Tensor main = cfg.loss_kind == LossKind::triplet
                                  ? triplet_loss(tape, out.cls_anchor, out.cls_positive,
                                                 out.cls_target, bundle.config.margin)
                                  : distance_loss(tape, out.cls_anchor, out.cls_target);
                if (!dt.anchor_golden) {
                    throw LabelError("train_step: aux enabled but anchor carries no golden span");
                }
                std::vector<bool> all_valid(et.f_anchor.rows(), true);
                auto enc_anchor_raw =
                    encoder_layer(tape, bundle.params, "de.l0", enc.num_heads, enc.dropout_rate,
                                  et.f_anchor, all_valid, train_flag, state.dropout_rng);
                auto aux_dist = span_distribution(tape, enc_anchor_raw, bundle.params, "dq");
                auto aux = mrc_loss(tape, aux_dist, dt.anchor_golden->first,
                                    dt.anchor_golden->second);
                ld = ad::add(tape, main, aux);
            }
            ld_terms.push_back(ld);
            stats.cls.push_back({out.cls_anchor.values(), out.cls_positive.values(),
                                 out.cls_target.values()});
        }
    }

    if (lq_terms.empty() && ld_terms.empty()) {
        throw ContractError("train_step: batch produced no loss terms");
    }

    Tensor objective;  // L_Q + L_D with the reversal wired inside the D branch
    if (!lq_terms.empty()) {
        objective = mean_of(tape, lq_terms);
        stats.loss_q = objective.item();
    }
    if (!ld_terms.empty()) {
        Tensor ld_mean = mean_of(tape, ld_terms);
        stats.loss_d = ld_mean.item();
        objective = lq_terms.empty() ? ld_mean : ad::add(tape, objective, ld_mean);
    }
    stats.loss_total = stats.loss_q - lambda * stats.loss_d;

    check_finite_loss(stats.loss_q, cfg.divergence_limit, "L_Q");
    check_finite_loss(stats.loss_d, cfg.divergence_limit, "L_D");

    tape.backward(objective);
    state.optimizer.step(bundle.params);
    bundle.params.zero_grads();
    return stats;
}

namespace {

std::vector<TripletIndices> sample_baseline_batch(const TrainData& data, Rng& rng,
                                                  std::size_t units) {
    // Baseline step: the same number of L_Q samples as a triplet batch, drawn
    // from the labeled pool (source plus any labeled target examples).
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < data.source_units.size(); ++i) {
        if (data.source_units[i].is_labeled) pool.push_back(i);
    }
    for (std::size_t i = 0; i < data.target_units.size(); ++i) {
        if (data.target_units[i].is_labeled) pool.push_back(data.source_units.size() + i);
    }
    if (pool.empty()) throw SamplingError("baseline step: no labeled examples");
    std::vector<TripletIndices> batch;
    for (std::size_t i = 0; i < units; ++i) {
        // Reuse the triplet record: anchor carries the unit, positive/target unused.
        const std::size_t u = pool[rng.uniform_index(pool.size())];
        batch.push_back({u, 0, 0});
    }
    return batch;
}

StepStats baseline_step(ModelBundle& bundle, const TrainData& data,
                        const std::vector<TripletIndices>& batch, const TrainConfig& cfg,
                        TrainState& state) {
    Tape tape;
    std::vector<Tensor> lq_terms;
    const EncoderConfig& enc = bundle.config.encoder;
    for (const auto& u : batch) {
        const corpus::TokenizedExample& ex =
            u.anchor < data.source_units.size()
                ? data.source_units[u.anchor]
                : data.target_units[u.anchor - data.source_units.size()];
        auto f = encode(tape, bundle.params, "mf", enc, ex, cfg.train_dropout, state.dropout_rng);
        auto dist = span_distribution(tape, f, bundle.params, "mq");
        lq_terms.push_back(mrc_loss(tape, dist, *ex.answer_start, *ex.answer_end));
    }
    StepStats stats;
    Tensor objective = mean_of(tape, lq_terms);
    stats.loss_q = objective.item();
    stats.loss_total = stats.loss_q;
    check_finite_loss(stats.loss_q, cfg.divergence_limit, "L_Q");
    tape.backward(objective);
    state.optimizer.step(bundle.params);
    bundle.params.zero_grads();
    return stats;
}

std::map<std::string, std::vector<double>> snapshot_values(const ParamStore& params) {
    std::map<std::string, std::vector<double>> snap;
    for (const auto& [name, t] : params.all()) snap[name] = t.values();
    return snap;
}

void restore_values(ParamStore& params, const std::map<std::string, std::vector<double>>& snap) {
    for (auto& [name, t] : params.all()) t.values() = snap.at(name);
}

}  // namespace

TrainReport run_experiment(ModelBundle& bundle, const TrainData& data, const TrainConfig& cfg) {
    cfg.validate();
    TrainReport report;
    TrainState state(cfg);
    auto last_good = snapshot_values(bundle.params);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        state.epoch = epoch;
        state.lambda = lambda_at(epoch, cfg.lambda_schedule);
        EpochStats es;
        es.epoch = epoch;
        es.lambda = state.lambda;
        std::vector<TripletClsValues> epoch_cls;
        bool failed = false;
        try {
            for (std::size_t s = 0; s < cfg.steps_per_epoch; ++s) {
                StepStats st;
                if (cfg.discriminator_enabled) {
                    auto batch = sample_step(data, state.sample_rng, cfg.batch_triplets,
                                             cfg.aux_enabled);
                    st = train_step(bundle, data, batch, cfg, state);
                } else {
                    auto batch = sample_baseline_batch(data, state.sample_rng,
                                                       2 * cfg.batch_triplets);
                    st = baseline_step(bundle, data, batch, cfg, state);
                }
                es.mean_loss_q += st.loss_q;
                es.mean_loss_d += st.loss_d;
                es.mean_loss_total += st.loss_total;
                for (auto& c : st.cls) epoch_cls.push_back(std::move(c));
            }
        } catch (const DivergenceError& e) {
            report.diverged = true;
            report.divergence_message = e.what();
            restore_values(bundle.params, last_good);
            failed = true;
        }
        if (failed) break;
        const double n = static_cast<double>(cfg.steps_per_epoch);
        es.mean_loss_q /= n;
        es.mean_loss_d /= n;
        es.mean_loss_total /= n;
        if (!epoch_cls.empty()) {
            auto means = pair_distance_trace(epoch_cls);
            es.mean_d_source_source = means.source_source;
            es.mean_d_source_target = means.source_target;
        }
        if (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0 &&
            !data.test_windows.empty() && !data.golds.empty()) {
            es.eval = evaluate_model(bundle, data.test_windows, data.golds);
        }
        report.epochs.push_back(es);
        if (cfg.trace_vectors) report.epoch_cls.push_back(std::move(epoch_cls));
        last_good = snapshot_values(bundle.params);
    }

    if (cfg.eval_final && !data.test_windows.empty() && !data.golds.empty()) {
        report.final_metrics = evaluate_model(bundle, data.test_windows, data.golds);
    }
    return report;
}

std::map<std::string, PredictionList> predict_dataset(
    const ModelBundle& bundle, const std::vector<corpus::TokenizedExample>& windows) {
    // Group windows per question, then merge their candidate pools.
    std::map<std::string, std::vector<const corpus::TokenizedExample*>> grouped;
    for (const auto& w : windows) grouped[w.example_id].push_back(&w);

    std::map<std::string, PredictionList> out;
    Rng dummy(0);
    for (const auto& [id, group] : grouped) {
        std::vector<std::pair<SpanScores, const corpus::TokenizedExample*>> scored;
        for (const corpus::TokenizedExample* w : group) {
            Tape tape;
            auto f = encode(tape, bundle.params, "mf", bundle.config.encoder, *w, false, dummy);
            auto dist = span_distribution(tape, f, bundle.params, "mq");
            scored.emplace_back(span_scores(dist), w);
        }
        out[id] = decode_n_best_merged(scored, bundle.config.n_best,
                                       bundle.config.max_answer_length);
    }
    return out;
}

metrics::MetricReport evaluate_model(const ModelBundle& bundle,
                                     const std::vector<corpus::TokenizedExample>& windows,
                                     const std::vector<metrics::GoldenAnswer>& golds) {
    return metrics::compute_metrics(predict_dataset(bundle, windows), golds);
}

std::vector<std::vector<double>> extract_cls(const ModelBundle& bundle,
                                             const std::vector<corpus::TokenizedExample>& windows) {
    std::vector<std::vector<double>> out;
    out.reserve(windows.size());
    Rng dummy(0);
    for (const auto& w : windows) {
        Tape tape;
        auto f = encode(tape, bundle.params, "mf", bundle.config.encoder, w, false, dummy);
        const std::size_t h = f.cols();
        std::vector<double> cls(h);
        for (std::size_t j = 0; j < h; ++j) cls[j] = f.at(0, j);
        out.push_back(std::move(cls));
    }
    return out;
}

}  // namespace bioadapt
