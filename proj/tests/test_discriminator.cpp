#include <doctest.h>

#include <cmath>

#include "bioadapt/discriminator.hpp"
#include "bioadapt/encoder.hpp"
#include "finite_diff.hpp"

using namespace bioadapt;
using testutil::finite_difference_grads;
using testutil::grads_close;

namespace {

ModelConfig tiny_model_config() {
    ModelConfig cfg;
    cfg.encoder.num_layers = 1;
    cfg.encoder.hidden_size = 6;
    cfg.encoder.num_heads = 2;
    cfg.encoder.ffn_inner_size = 10;
    cfg.encoder.dropout_rate = 0.0;
    cfg.encoder.max_positions = 16;
    cfg.encoder.vocab_size = 10;
    cfg.margin = 0.2;
    return cfg;
}

ParamStore disc_store(const ModelConfig& cfg, std::uint64_t seed) {
    ParamStore store;
    Rng rng(seed);
    init_discriminator_params(store, cfg.encoder, rng);
    return store;
}

DomainTriplet random_triplet(const ModelConfig& cfg, Rng& rng, std::size_t n = 4) {
    DomainTriplet t;
    t.f_target = testutil::random_tensor({n, cfg.encoder.hidden_size}, rng, 1.0, false);
    t.f_source_anchor = testutil::random_tensor({n, cfg.encoder.hidden_size}, rng, 1.0, false);
    t.f_source_positive = testutil::random_tensor({n, cfg.encoder.hidden_size}, rng, 1.0, false);
    t.anchor_golden = {{1, 2}};
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("discriminator");

TEST_CASE("triplet loss fixtures from cosine distances") {
    // construct [CLS] vectors with the wanted pairwise cosine distances
    auto vec = [](double angle) {
        return ad::Tensor::from({2}, {std::cos(angle), std::sin(angle)});
    };
    // d(u,v) = 1 - cos(angle between) -> angle = acos(1 - d)
    const double a_pos = std::acos(1.0 - 0.1);
    const double a_neg = std::acos(1.0 - 0.5);
    {
        ad::Tape t;
        auto loss = triplet_loss(t, vec(0.0), vec(a_pos), vec(a_neg), 0.3);
        CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-12));  // margin satisfied
    }
    {
        ad::Tape t;
        auto loss = triplet_loss(t, vec(0.0), vec(a_neg), vec(a_pos), 0.3);
        CHECK(loss.item() == doctest::Approx(0.7).epsilon(1e-9));  // 0.5 - 0.1 + 0.3
    }
    {
        ad::Tape t;
        auto same = vec(0.4);
        auto loss = triplet_loss(t, same, same, same, 0.3);
        CHECK(loss.item() == doctest::Approx(0.3).epsilon(1e-12));  // d_pos = d_neg = 0 -> alpha
    }
    {
        ad::Tape t;
        auto zero = ad::Tensor::from({2}, {0.0, 0.0});
        CHECK_THROWS_AS(triplet_loss(t, zero, vec(0.1), vec(0.2), 0.3), DegenerateVectorError);
        CHECK_THROWS_AS(triplet_loss(t, vec(0.1), vec(0.2), vec(0.3), -0.1), ConfigError);
    }
}

TEST_CASE("distance loss fixtures") {
    ad::Tape t;
    auto u = ad::Tensor::from({3}, {1, 2, 3});
    CHECK(distance_loss(t, u, u).item() == doctest::Approx(0.0).epsilon(1e-12));
    auto e1 = ad::Tensor::from({2}, {1, 0});
    auto e2 = ad::Tensor::from({2}, {0, 1});
    CHECK(distance_loss(t, e1, e2).item() == doctest::Approx(1.0).epsilon(1e-12));
    auto neg = ad::Tensor::from({2}, {-1, 0});
    CHECK(distance_loss(t, e1, neg).item() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("triplet loss is scale-invariant in each [CLS] vector") {
    Rng rng(3);
    auto u = testutil::random_tensor({5}, rng, 1.0, false);
    auto v = testutil::random_tensor({5}, rng, 1.0, false);
    auto w = testutil::random_tensor({5}, rng, 1.0, false);
    ad::Tape t;
    const double base = triplet_loss(t, u, v, w, 0.2).item();
    for (double c : {0.5, 3.0, 117.0}) {
        ad::Tape t2;
        auto us = ad::scale(t2, u, c);
        CHECK(triplet_loss(t2, us, v, w, 0.2).item() == doctest::Approx(base).epsilon(1e-10));
    }
}

TEST_CASE("triplet loss is non-negative and zero iff margin satisfied") {
    Rng rng(5);
    for (int trial = 0; trial < 40; ++trial) {
        auto u = testutil::random_tensor({4}, rng, 1.0, false);
        auto v = testutil::random_tensor({4}, rng, 1.0, false);
        auto w = testutil::random_tensor({4}, rng, 1.0, false);
        ad::Tape t;
        const double d_pos = 1.0 - ad::cosine_similarity(t, u, v).item();
        const double d_neg = 1.0 - ad::cosine_similarity(t, u, w).item();
        const double loss = triplet_loss(t, u, v, w, 0.2).item();
        CHECK(loss >= 0.0);
        if (d_neg >= d_pos + 0.2) {
            CHECK(loss == doctest::Approx(0.0).epsilon(1e-12));
        } else {
            CHECK(loss > 0.0);
        }
    }
}

TEST_CASE("Siamese property: the same features yield the same [CLS] in any slot") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 7);
    Rng rng(9);
    auto shared = testutil::random_tensor({4, cfg.encoder.hidden_size}, rng, 1.0, false);
    DomainTriplet trip;
    trip.f_target = shared;
    trip.f_source_anchor = shared;
    trip.f_source_positive = shared;
    ad::Tape tape;
    Rng drop(1);
    auto out = discriminate(tape, store, cfg.encoder, trip, false, drop);
    CHECK(out.cls_target.values() == out.cls_anchor.values());
    CHECK(out.cls_anchor.values() == out.cls_positive.values());
}

TEST_CASE("swapping anchor and positive only relabels roles") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 11);
    Rng rng(13);
    auto trip = random_triplet(cfg, rng);
    ad::Tape tape;
    Rng drop(1);
    auto out = discriminate(tape, store, cfg.encoder, trip, false, drop);
    DomainTriplet swapped = trip;
    std::swap(swapped.f_source_anchor, swapped.f_source_positive);
    ad::Tape tape2;
    auto out2 = discriminate(tape2, store, cfg.encoder, swapped, false, drop);
    CHECK(out.cls_anchor.values() == out2.cls_positive.values());
    CHECK(out.cls_positive.values() == out2.cls_anchor.values());
    CHECK(out.cls_target.values() == out2.cls_target.values());
}

TEST_CASE("perturbing shared D_e weights moves all three [CLS] outputs") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 15);
    Rng rng(17);
    auto trip = random_triplet(cfg, rng);
    ad::Tape tape;
    Rng drop(1);
    auto before = discriminate(tape, store, cfg.encoder, trip, false, drop);
    store.get("de.l0.attn.wq").at(0, 0) += 0.5;
    ad::Tape tape2;
    auto after = discriminate(tape2, store, cfg.encoder, trip, false, drop);
    CHECK(before.cls_target.values() != after.cls_target.values());
    CHECK(before.cls_anchor.values() != after.cls_anchor.values());
    CHECK(before.cls_positive.values() != after.cls_positive.values());
}

TEST_CASE("discriminator loss decomposes into triplet plus auxiliary terms") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 19);
    Rng rng(21);
    auto trip = random_triplet(cfg, rng);
    Rng drop(1);

    ad::Tape t1;
    const double full = discriminator_loss(t1, store, cfg, trip, LossKind::triplet, true, false,
                                           drop).item();
    ad::Tape t2;
    DiscriminatorOutput out;
    const double trip_only = discriminator_loss(t2, store, cfg, trip, LossKind::triplet, false,
                                                false, drop, &out).item();
    ad::Tape t3;
    auto enc = discriminate(t3, store, cfg.encoder, trip, false, drop);
    auto dist = span_distribution(t3, enc.encoded_anchor, store, "dq");
    const double aux = mrc_loss(t3, dist, trip.anchor_golden->first,
                                trip.anchor_golden->second).item();
    CHECK(full == doctest::Approx(trip_only + aux).epsilon(1e-12));
}

TEST_CASE("aux disabled drops the term and leaves D_q gradients at zero") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 23);
    Rng rng(25);
    auto trip = random_triplet(cfg, rng);
    Rng drop(1);
    ad::Tape tape;
    auto loss = discriminator_loss(tape, store, cfg, trip, LossKind::triplet, false, false, drop);
    tape.backward(loss);
    for (double g : store.get("dq.w_start").grad()) CHECK(g == 0.0);
    for (double g : store.get("dq.w_end").grad()) CHECK(g == 0.0);

    // missing golden span only matters when aux is on
    DomainTriplet no_label = trip;
    no_label.anchor_golden.reset();
    ad::Tape t2;
    CHECK_NOTHROW(discriminator_loss(t2, store, cfg, no_label, LossKind::triplet, false, false,
                                     drop));
    ad::Tape t3;
    CHECK_THROWS_AS(discriminator_loss(t3, store, cfg, no_label, LossKind::triplet, true, false,
                                       drop),
                    LabelError);
}

TEST_CASE("aux disabled reproduces the bare triplet loss value") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 27);
    Rng rng(29);
    auto trip = random_triplet(cfg, rng);
    Rng drop(1);
    ad::Tape t1;
    DiscriminatorOutput out;
    const double ld = discriminator_loss(t1, store, cfg, trip, LossKind::triplet, false, false,
                                         drop, &out).item();
    ad::Tape t2;
    const double direct =
        triplet_loss(t2, out.cls_anchor, out.cls_positive, out.cls_target, cfg.margin).item();
    CHECK(ld == doctest::Approx(direct).epsilon(1e-15));
}

TEST_CASE("triplet loss gradient through D_e matches finite differences") {
    auto cfg = tiny_model_config();
    auto store = disc_store(cfg, 31);
    Rng rng(33);
    auto trip = random_triplet(cfg, rng, 3);
    auto build = [&](ad::Tape& t) {
        Rng drop(1);
        return discriminator_loss(t, store, cfg, trip, LossKind::triplet, true, false, drop);
    };
    {
        ad::Tape t;
        t.backward(build(t));
    }
    auto f = [&] {
        ad::Tape t;
        return build(t).item();
    };
    for (const char* name : {"de.l0.attn.wq", "de.l0.ffn.w1", "dq.w_start"}) {
        std::vector<ad::Tensor> ins{store.get(name)};
        auto fd = finite_difference_grads(f, ins);
        CHECK_MESSAGE(grads_close(store.get(name).grad(), fd[0]), name);
    }
}

TEST_CASE("pair distance trace fixtures and recomputation") {
    CHECK_THROWS_AS(pair_distance_trace({}), ContractError);

    TripletClsValues same{{1, 0}, {1, 0}, {0, 1}};
    auto m = pair_distance_trace({same});
    CHECK(m.source_source == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(m.source_target == doctest::Approx(1.0).epsilon(1e-12));

    TripletClsValues all_same{{2, 2}, {2, 2}, {2, 2}};
    auto z = pair_distance_trace({all_same});
    CHECK(z.source_source == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(z.source_target == doctest::Approx(0.0).epsilon(1e-12));

    // means equal brute-force recomputation from the stored vectors
    Rng rng(35);
    std::vector<TripletClsValues> epoch;
    for (int i = 0; i < 17; ++i) {
        TripletClsValues t;
        for (int k = 0; k < 6; ++k) {
            t.anchor.push_back(rng.normal());
            t.positive.push_back(rng.normal());
            t.target.push_back(rng.normal());
        }
        epoch.push_back(std::move(t));
    }
    auto got = pair_distance_trace(epoch);
    double ss = 0.0, st = 0.0;
    for (const auto& t : epoch) {
        ss += cosine_distance(t.anchor, t.positive);
        st += cosine_distance(t.anchor, t.target);
    }
    CHECK(got.source_source == doctest::Approx(ss / 17.0).epsilon(1e-12));
    CHECK(got.source_target == doctest::Approx(st / 17.0).epsilon(1e-12));
}

TEST_SUITE_END();
