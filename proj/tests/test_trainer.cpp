#include <doctest.h>

#include <cmath>
#include <map>

#include "bioadapt/encoder.hpp"
#include "bioadapt/trainer.hpp"

using namespace bioadapt;

namespace {

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.encoder.num_layers = 1;
    cfg.encoder.hidden_size = 8;
    cfg.encoder.num_heads = 2;
    cfg.encoder.ffn_inner_size = 12;
    cfg.encoder.dropout_rate = 0.0;
    cfg.encoder.max_positions = 48;
    cfg.encoder.vocab_size = 0;  // filled from the vocabulary
    cfg.margin = 0.2;
    return cfg;
}

struct TinyWorld {
    corpus::GeneratedCorpus corpus;
    TrainData data;
    ModelConfig config;
};

TinyWorld tiny_world(std::size_t n_source = 8, std::size_t n_target = 6,
                     double labeled_ratio = 0.0, std::size_t target_labeled_in_file = 0) {
    corpus::CorpusSpec spec;
    spec.topic_words_per_domain = 20;
    spec.source_labeled = n_source;
    spec.target_unlabeled = n_target - target_labeled_in_file;
    spec.target_labeled = target_labeled_in_file;
    spec.target_test = 4;
    spec.context_min_tokens = 20;
    spec.context_max_tokens = 26;
    spec.seed = 99;
    TinyWorld w;
    w.corpus = corpus::generate_corpus(spec);
    corpus::TokenizerLimits limits;
    w.data = build_train_data(w.corpus.source_train, w.corpus.target_train, w.corpus.target_test,
                              w.corpus.vocab, limits, labeled_ratio, 5);
    w.config = tiny_model_config();
    w.config.encoder.vocab_size = w.corpus.vocab.size();
    return w;
}

std::map<std::string, std::vector<double>> mf_grads(const ModelBundle& bundle) {
    std::map<std::string, std::vector<double>> out;
    for (const auto& [name, t] : bundle.params.all()) {
        if (name.rfind("mf.", 0) == 0 || name.rfind("mq.", 0) == 0) out[name] = t.grad();
    }
    return out;
}

// Forward/backward WITHOUT an optimizer update, so gradients can be compared.
void backward_only(ModelBundle& bundle, const TrainData& data,
                   const std::vector<TripletIndices>& batch, double lambda, bool include_lq,
                   bool include_ld, bool reverse) {
    ad::Tape tape;
    Rng drop(1);
    std::vector<ad::Tensor> lq_terms, ld_terms;
    for (const auto& trip : batch) {
        const auto& ex_a = data.source_units[trip.anchor];
        const auto& ex_p = data.source_units[trip.positive];
        const auto& ex_t = data.target_units[trip.target];
        auto f_a = encode(tape, bundle.params, "mf", bundle.config.encoder, ex_a, false, drop);
        auto f_p = encode(tape, bundle.params, "mf", bundle.config.encoder, ex_p, false, drop);
        auto f_t = encode(tape, bundle.params, "mf", bundle.config.encoder, ex_t, false, drop);
        if (include_lq) {
            for (auto [ex, f] : {std::pair{&ex_a, &f_a}, {&ex_p, &f_p}, {&ex_t, &f_t}}) {
                if (!ex->is_labeled) continue;
                auto dist = span_distribution(tape, *f, bundle.params, "mq");
                lq_terms.push_back(mrc_loss(tape, dist, *ex->answer_start, *ex->answer_end));
            }
        }
        if (include_ld) {
            DomainTriplet dt;
            dt.f_target = reverse ? ad::gradient_reversal(tape, f_t, lambda) : f_t;
            dt.f_source_anchor = reverse ? ad::gradient_reversal(tape, f_a, lambda) : f_a;
            dt.f_source_positive = reverse ? ad::gradient_reversal(tape, f_p, lambda) : f_p;
            dt.anchor_golden = {{*ex_a.answer_start, *ex_a.answer_end}};
            ld_terms.push_back(discriminator_loss(tape, bundle.params, bundle.config, dt,
                                                  LossKind::triplet, true, false, drop));
        }
    }
    auto mean_terms = [&](std::vector<ad::Tensor>& v) {
        ad::Tensor acc = v.front();
        for (std::size_t i = 1; i < v.size(); ++i) acc = ad::add(tape, acc, v[i]);
        return ad::scale(tape, acc, 1.0 / static_cast<double>(v.size()));
    };
    ad::Tensor obj;
    if (include_lq) obj = mean_terms(lq_terms);
    if (include_ld) {
        auto ld = mean_terms(ld_terms);
        obj = include_lq ? ad::add(tape, obj, ld) : ld;
    }
    tape.backward(obj);
}

}  // namespace

TEST_SUITE_BEGIN("trainer");

TEST_CASE("lambda schedule fixtures") {
    LambdaSchedule s;
    CHECK(lambda_at(0, s) == 0.0);
    CHECK(lambda_at(9, s) == 0.0);
    CHECK(lambda_at(10, s) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lambda_at(19, s) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lambda_at(25, s) == doctest::Approx(0.02).epsilon(1e-15));
    CHECK(lambda_at(39, s) == doctest::Approx(0.03).epsilon(1e-15));
    CHECK(lambda_at(40, s) == doctest::Approx(0.04).epsilon(1e-15));
    CHECK(lambda_at(500, s) == doctest::Approx(0.04).epsilon(1e-15));
    for (std::size_t epoch = 0; epoch < 100; ++epoch) {
        const double expect = std::min(0.04, 0.01 * static_cast<double>(epoch / 10));
        CHECK(lambda_at(epoch, s) == doctest::Approx(expect).epsilon(1e-15));
    }
}

TEST_CASE("sampling contracts") {
    auto w = tiny_world(3, 3);
    Rng rng(1);

    SUBCASE("triplets hold two distinct source examples") {
        auto batch = sample_step(w.data, rng, 200, true);
        for (const auto& t : batch) {
            CHECK(t.anchor != t.positive);
            CHECK(t.anchor < w.data.source_units.size());
            CHECK(t.positive < w.data.source_units.size());
            CHECK(t.target < w.data.target_units.size());
        }
    }

    SUBCASE("anchors are uniform over the source pool") {
        std::map<std::size_t, std::size_t> counts;
        for (int i = 0; i < 10000; ++i) {
            auto batch = sample_step(w.data, rng, 1, true);
            ++counts[batch[0].anchor];
        }
        for (const auto& [idx, c] : counts) {
            CHECK(std::fabs(static_cast<double>(c) / 10000.0 - 1.0 / 3.0) <= 0.02);
        }
    }

    SUBCASE("fixed seed reproduces the sampling sequence") {
        Rng r1(42), r2(42);
        auto b1 = sample_step(w.data, r1, 50, true);
        auto b2 = sample_step(w.data, r2, 50, true);
        for (std::size_t i = 0; i < b1.size(); ++i) {
            CHECK(b1[i].anchor == b2[i].anchor);
            CHECK(b1[i].positive == b2[i].positive);
            CHECK(b1[i].target == b2[i].target);
        }
    }

    SUBCASE("source pools below two examples are rejected") {
        TrainData starved = w.data;
        starved.source_units.resize(1);
        starved.source_anchor_pool = {0};
        CHECK_THROWS_AS(sample_step(starved, rng, 1, true), SamplingError);
        TrainData no_target = w.data;
        no_target.target_units.clear();
        CHECK_THROWS_AS(sample_step(no_target, rng, 1, true), SamplingError);
    }
}

TEST_CASE("two-source-and-one-target pools admit only one triplet") {
    auto w = tiny_world(2, 1);
    Rng rng(3);
    auto batch = sample_step(w.data, rng, 20, true);
    for (const auto& t : batch) {
        CHECK(t.target == 0);
        CHECK(((t.anchor == 0 && t.positive == 1) || (t.anchor == 1 && t.positive == 0)));
    }
}

TEST_CASE("GRL contract: combined gradient decomposes as dLQ - lambda dLD") {
    auto w = tiny_world(5, 4);
    ModelBundle bundle = init_model(w.config, 11);
    Rng rng(7);
    auto batch = sample_step(w.data, rng, 3, true);
    const double lambda = 0.03;

    backward_only(bundle, w.data, batch, lambda, true, true, true);
    auto combined = mf_grads(bundle);
    bundle.params.zero_grads();

    backward_only(bundle, w.data, batch, lambda, true, false, false);
    auto g_q = mf_grads(bundle);
    bundle.params.zero_grads();

    backward_only(bundle, w.data, batch, lambda, false, true, false);
    auto g_d = mf_grads(bundle);
    bundle.params.zero_grads();

    for (const auto& [name, g] : combined) {
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double expect = g_q[name][i] - lambda * g_d[name][i];
            CHECK(std::fabs(g[i] - expect) <= 1e-10);
        }
    }
}

TEST_CASE("GRL contract: lambda zero reproduces the detached baseline exactly") {
    auto w = tiny_world(5, 4);
    ModelBundle bundle = init_model(w.config, 13);
    Rng rng(9);
    auto batch = sample_step(w.data, rng, 3, true);

    backward_only(bundle, w.data, batch, 0.0, true, true, true);
    auto with_disc = mf_grads(bundle);
    bundle.params.zero_grads();

    backward_only(bundle, w.data, batch, 0.0, true, false, false);
    auto detached = mf_grads(bundle);

    for (const auto& [name, g] : with_disc) {
        for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == detached[name][i]);
    }
}

TEST_CASE("discriminator parameters move to descend L_D while M_F ascends it") {
    auto w = tiny_world(5, 4);
    ModelBundle bundle = init_model(w.config, 15);
    Rng rng(11);
    auto batch = sample_step(w.data, rng, 3, true);
    const double lambda = 0.04;

    // combined pass
    backward_only(bundle, w.data, batch, lambda, true, true, true);
    std::map<std::string, std::vector<double>> disc_combined;
    for (const auto& [name, t] : bundle.params.all()) {
        if (name.rfind("de.", 0) == 0 || name.rfind("dq.", 0) == 0)
            disc_combined[name] = t.grad();
    }
    bundle.params.zero_grads();

    // unreversed L_D-only pass
    backward_only(bundle, w.data, batch, lambda, false, true, false);
    for (const auto& [name, g] : disc_combined) {
        const auto& plain = bundle.params.get(name).grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            CHECK(g[i] == doctest::Approx(plain[i]).epsilon(1e-12));  // D unaffected by GRL
        }
    }
}

TEST_CASE("train_step with discriminator disabled never touches D parameters") {
    auto w = tiny_world(6, 4);
    ModelBundle bundle = init_model(w.config, 17);
    TrainConfig cfg;
    cfg.discriminator_enabled = false;
    cfg.learning_rate = 1e-3;
    cfg.batch_triplets = 2;
    cfg.epochs = 2;
    cfg.steps_per_epoch = 3;
    cfg.train_dropout = false;
    cfg.eval_final = false;
    auto before_de = bundle.params.get("de.l0.attn.wq").values();
    auto before_dq = bundle.params.get("dq.w_start").values();
    auto report = run_experiment(bundle, w.data, cfg);
    CHECK_FALSE(report.diverged);
    CHECK(bundle.params.get("de.l0.attn.wq").values() == before_de);
    CHECK(bundle.params.get("dq.w_start").values() == before_dq);
    for (const auto& e : report.epochs) {
        CHECK(e.mean_loss_d == 0.0);
        CHECK(std::isfinite(e.mean_loss_q));
    }
}

TEST_CASE("run_experiment is deterministic under a fixed seed") {
    auto w = tiny_world(6, 4);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_triplets = 2;
    cfg.epochs = 3;
    cfg.steps_per_epoch = 2;
    cfg.seed = 4242;
    cfg.eval_final = true;

    ModelBundle b1 = init_model(w.config, 21);
    auto r1 = run_experiment(b1, w.data, cfg);
    ModelBundle b2 = init_model(w.config, 21);
    auto r2 = run_experiment(b2, w.data, cfg);

    REQUIRE(r1.epochs.size() == r2.epochs.size());
    for (std::size_t i = 0; i < r1.epochs.size(); ++i) {
        CHECK(r1.epochs[i].mean_loss_q == r2.epochs[i].mean_loss_q);
        CHECK(r1.epochs[i].mean_loss_d == r2.epochs[i].mean_loss_d);
    }
    REQUIRE(r1.final_metrics.has_value());
    CHECK(r1.final_metrics->sacc == r2.final_metrics->sacc);
    CHECK(r1.final_metrics->mrr == r2.final_metrics->mrr);
    for (const auto& [name, t] : b1.params.all()) {
        CHECK(t.values() == b2.params.get(name).values());
    }
}

TEST_CASE("lambda trace of a run matches the schedule pointwise") {
    auto w = tiny_world(4, 3);
    ModelBundle bundle = init_model(w.config, 23);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_triplets = 1;
    cfg.epochs = 25;
    cfg.steps_per_epoch = 1;
    cfg.eval_final = false;
    auto report = run_experiment(bundle, w.data, cfg);
    REQUIRE(report.epochs.size() == 25);
    for (std::size_t e = 0; e < 25; ++e) {
        CHECK(report.epochs[e].lambda == lambda_at(e, cfg.lambda_schedule));
    }
}

TEST_CASE("loss history of an accepted run is finite and traces are recomputable") {
    auto w = tiny_world(6, 5);
    ModelBundle bundle = init_model(w.config, 25);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_triplets = 2;
    cfg.epochs = 4;
    cfg.steps_per_epoch = 3;
    cfg.trace_vectors = true;
    cfg.eval_final = false;
    auto report = run_experiment(bundle, w.data, cfg);
    CHECK_FALSE(report.diverged);
    REQUIRE(report.epoch_cls.size() == report.epochs.size());
    for (std::size_t e = 0; e < report.epochs.size(); ++e) {
        CHECK(std::isfinite(report.epochs[e].mean_loss_q));
        CHECK(std::isfinite(report.epochs[e].mean_loss_d));
        CHECK(std::isfinite(report.epochs[e].mean_loss_total));
        auto means = pair_distance_trace(report.epoch_cls[e]);
        CHECK(*report.epochs[e].mean_d_source_source ==
              doctest::Approx(means.source_source).epsilon(1e-12));
        CHECK(*report.epochs[e].mean_d_source_target ==
              doctest::Approx(means.source_target).epsilon(1e-12));
    }
}

TEST_CASE("semi-supervised ratio labels the requested share of target units") {
    auto w_all = tiny_world(6, 6, 0.5, 6);  // all target examples carry labels in the file
    std::size_t labeled = 0;
    for (const auto& u : w_all.data.target_units) labeled += u.is_labeled;
    CHECK(labeled == 3);
    for (const auto& u : w_all.data.target_units) {
        if (!u.is_labeled) {
            CHECK(u.input_ids[1] == corpus::Vocabulary::kMask);
            CHECK_FALSE(u.answer_start.has_value());
        }
    }

    // requesting more labels than the file provides is a config error
    auto w_none = tiny_world(6, 6);  // target-train entirely unlabeled
    corpus::TokenizerLimits limits;
    CHECK_THROWS_AS(build_train_data(w_none.corpus.source_train, w_none.corpus.target_train,
                                     w_none.corpus.target_test, w_none.corpus.vocab, limits, 0.5,
                                     5),
                    ConfigError);
}

TEST_CASE("labeled target members contribute to L_Q") {
    auto w = tiny_world(6, 6, 1.0, 6);
    ModelBundle bundle = init_model(w.config, 27);
    for (const auto& u : w.data.target_units) CHECK(u.is_labeled);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_triplets = 2;
    cfg.epochs = 1;
    cfg.steps_per_epoch = 2;
    cfg.eval_final = false;
    auto report = run_experiment(bundle, w.data, cfg);
    CHECK_FALSE(report.diverged);
}

TEST_CASE("divergence guard restores the last good parameters") {
    auto w = tiny_world(5, 4);
    ModelBundle bundle = init_model(w.config, 29);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_triplets = 1;
    cfg.epochs = 3;
    cfg.steps_per_epoch = 1;
    cfg.divergence_limit = 1e-9;  // everything counts as divergent
    cfg.eval_final = false;
    auto before = bundle.params.get("mf.tok_emb").values();
    auto report = run_experiment(bundle, w.data, cfg);
    CHECK(report.diverged);
    CHECK(!report.divergence_message.empty());
    CHECK(bundle.params.get("mf.tok_emb").values() == before);
    CHECK(report.epochs.empty());
}

TEST_SUITE_END();
