#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "bioadapt/metrics.hpp"
#include "bioadapt/rng.hpp"

using namespace bioadapt;
using namespace bioadapt::metrics;

namespace {

// Independent reference scorer: walks golds one by one, re-deriving ranks with
// its own normalizer. Deliberately written differently from the library path.
struct OracleScores {
    double sacc, lacc, mrr, em, f1;
};

std::vector<std::string> oracle_words(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (std::ispunct(u)) {
            continue;
        } else if (!cur.empty()) {
            out.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(cur);
    std::size_t skip = 0;
    while (skip < out.size() && (out[skip] == "a" || out[skip] == "an" || out[skip] == "the"))
        ++skip;
    return {out.begin() + skip, out.end()};
}

bool oracle_match(const std::string& a, const std::string& b) {
    return oracle_words(a) == oracle_words(b);
}

OracleScores oracle_score(const std::map<std::string, PredictionList>& preds,
                          const std::vector<GoldenAnswer>& golds) {
    OracleScores s{0, 0, 0, 0, 0};
    for (const auto& g : golds) {
        int rank = 0;
        auto it = preds.find(g.id);
        if (it != preds.end()) {
            for (std::size_t i = 0; i < std::min<std::size_t>(5, it->second.size()); ++i) {
                if (oracle_match(it->second[i].text, g.text)) {
                    rank = static_cast<int>(i) + 1;
                    break;
                }
            }
        }
        if (rank == 1) s.sacc += 1;
        if (rank >= 1) s.lacc += 1;
        if (rank >= 1) s.mrr += 1.0 / rank;
        if (it != preds.end() && !it->second.empty()) {
            const auto p = oracle_words(it->second.front().text);
            const auto q = oracle_words(g.text);
            if (p == q) s.em += 1;
            // multiset overlap
            auto pc = p;
            auto qc = q;
            std::sort(pc.begin(), pc.end());
            std::sort(qc.begin(), qc.end());
            std::vector<std::string> common;
            std::set_intersection(pc.begin(), pc.end(), qc.begin(), qc.end(),
                                  std::back_inserter(common));
            if (!common.empty() && !p.empty() && !q.empty()) {
                const double prec = static_cast<double>(common.size()) / p.size();
                const double rec = static_cast<double>(common.size()) / q.size();
                s.f1 += 2 * prec * rec / (prec + rec);
            } else if (p.empty() && q.empty()) {
                s.f1 += 1;
            }
        }
    }
    const double n = static_cast<double>(golds.size());
    s.sacc /= n;
    s.lacc /= n;
    s.mrr /= n;
    s.em /= n;
    s.f1 /= n;
    return s;
}

PredictionList preds_of(std::initializer_list<const char*> texts) {
    PredictionList out;
    double score = 1.0;
    for (const char* t : texts) {
        out.push_back({t, 0, 0, score});
        score -= 0.1;
    }
    return out;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("match normalization fixtures") {
    CHECK(match("Cortisol", "cortisol"));
    CHECK(match("the BRCA1 gene", "BRCA1 gene"));
    CHECK_FALSE(match("BRCA1", "BRCA2"));
    CHECK(match("heart  disease,", "heart disease"));
    CHECK(match("An Answer", "answer"));
}

TEST_CASE("Eq. 7 hand fixture: ranks 1, 2, absent") {
    std::map<std::string, PredictionList> preds;
    preds["q1"] = preds_of({"right", "other"});
    preds["q2"] = preds_of({"wrong", "right"});
    preds["q3"] = preds_of({"wrong", "also wrong"});
    std::vector<GoldenAnswer> golds{{"q1", "right"}, {"q2", "right"}, {"q3", "right"}};
    auto r = compute_metrics(preds, golds);
    CHECK(r.sacc == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(r.lacc == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.mrr == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.n_test == 3);
}

TEST_CASE("perfect system scores 1 everywhere") {
    std::map<std::string, PredictionList> preds;
    std::vector<GoldenAnswer> golds;
    for (int i = 0; i < 7; ++i) {
        const std::string id = "q" + std::to_string(i);
        preds[id] = preds_of({"answer text"});
        golds.push_back({id, "answer text"});
    }
    auto r = compute_metrics(preds, golds);
    CHECK(r.sacc == 1.0);
    CHECK(r.lacc == 1.0);
    CHECK(r.mrr == 1.0);
    CHECK(*r.em == 1.0);
    CHECK(*r.f1 == 1.0);
}

TEST_CASE("empty gold set is a metric error") {
    std::map<std::string, PredictionList> preds;
    CHECK_THROWS_AS(compute_metrics(preds, {}), MetricError);
}

TEST_CASE("EM/F1 fixtures") {
    std::map<std::string, PredictionList> preds;
    preds["a"] = preds_of({"heart disease risk"});
    std::vector<GoldenAnswer> golds{{"a", "disease risk"}};
    auto [em, f1] = compute_em_f1(preds, golds);
    CHECK(em == 0.0);
    CHECK(f1 == doctest::Approx(0.8).epsilon(1e-12));  // precision 2/3, recall 1

    preds["a"] = preds_of({"alpha beta"});
    golds[0].text = "gamma delta";
    auto [em2, f12] = compute_em_f1(preds, golds);
    CHECK(em2 == 0.0);
    CHECK(f12 == 0.0);

    preds["a"] = preds_of({"exact phrase"});
    golds[0].text = "exact phrase";
    auto [em3, f13] = compute_em_f1(preds, golds);
    CHECK(em3 == 1.0);
    CHECK(f13 == 1.0);
}

TEST_CASE("library scores equal the independent oracle on 50 random fixtures") {
    Rng rng(101);
    const std::vector<std::string> lexicon = {"alpha", "beta",  "gamma", "delta", "epsilon",
                                              "zeta",  "theta", "kappa", "sigma", "omega"};
    auto random_phrase = [&](std::size_t max_words) {
        std::string s;
        const std::size_t n = 1 + rng.uniform_index(max_words);
        for (std::size_t i = 0; i < n; ++i) {
            if (i) s += ' ';
            s += lexicon[rng.uniform_index(lexicon.size())];
        }
        return s;
    };
    for (int fixture = 0; fixture < 50; ++fixture) {
        std::map<std::string, PredictionList> preds;
        std::vector<GoldenAnswer> golds;
        const std::size_t n_q = 3 + rng.uniform_index(10);
        for (std::size_t q = 0; q < n_q; ++q) {
            const std::string id = "q" + std::to_string(q);
            golds.push_back({id, random_phrase(3)});
            if (rng.uniform() < 0.1) continue;  // unanswered question
            PredictionList pl;
            const std::size_t n_p = rng.uniform_index(6);
            double score = 1.0;
            for (std::size_t p = 0; p < n_p; ++p) {
                // sometimes plant the golden answer at a random rank
                const bool plant = rng.uniform() < 0.3;
                pl.push_back({plant ? golds.back().text : random_phrase(3), 0, 0, score});
                score *= 0.9;
            }
            preds[id] = pl;
        }
        auto lib = compute_metrics(preds, golds);
        auto ref = oracle_score(preds, golds);
        CHECK(lib.sacc == doctest::Approx(ref.sacc).epsilon(1e-12));
        CHECK(lib.lacc == doctest::Approx(ref.lacc).epsilon(1e-12));
        CHECK(lib.mrr == doctest::Approx(ref.mrr).epsilon(1e-12));
        CHECK(*lib.em == doctest::Approx(ref.em).epsilon(1e-12));
        CHECK(*lib.f1 == doctest::Approx(ref.f1).epsilon(1e-12));
        // rank-1 implies top-5; each reciprocal rank between those events
        CHECK(lib.sacc <= lib.mrr + 1e-15);
        CHECK(lib.mrr <= lib.lacc + 1e-15);
    }
}

TEST_CASE("metrics are invariant under question order and duplication") {
    std::map<std::string, PredictionList> preds;
    std::vector<GoldenAnswer> golds;
    Rng rng(7);
    for (int q = 0; q < 9; ++q) {
        const std::string id = "q" + std::to_string(q);
        preds[id] = preds_of({q % 3 == 0 ? "gold" : "junk", q % 3 == 1 ? "gold" : "junk2"});
        golds.push_back({id, "gold"});
    }
    auto base = compute_metrics(preds, golds);

    auto shuffled = golds;
    for (std::size_t i = shuffled.size(); i > 1; --i) {
        std::swap(shuffled[i - 1], shuffled[rng.uniform_index(i)]);
    }
    auto perm = compute_metrics(preds, shuffled);
    CHECK(base.sacc == perm.sacc);
    CHECK(base.lacc == perm.lacc);
    CHECK(base.mrr == perm.mrr);

    // duplicate every question under fresh ids
    auto preds2 = preds;
    auto golds2 = golds;
    for (int q = 0; q < 9; ++q) {
        const std::string id = "q" + std::to_string(q);
        preds2["dup-" + id] = preds[id];
        golds2.push_back({"dup-" + id, "gold"});
    }
    auto doubled = compute_metrics(preds2, golds2);
    CHECK(base.sacc == doctest::Approx(doubled.sacc).epsilon(1e-12));
    CHECK(base.lacc == doctest::Approx(doubled.lacc).epsilon(1e-12));
    CHECK(base.mrr == doctest::Approx(doubled.mrr).epsilon(1e-12));
}

TEST_CASE("BioASQ golden-enriched adapter keeps factoid questions") {
    const std::string path = "/tmp/bioadapt_test_bioasq.json";
    {
        std::ofstream out(path);
        out << R"({"questions":[)"
            << R"({"id":"f1","type":"factoid","exact_answer":[["cortisol","hydrocortisone"]]},)"
            << R"({"id":"y1","type":"yesno","exact_answer":"yes"},)"
            << R"({"id":"f2","type":"factoid","exact_answer":["BRCA1"]}]})";
    }
    auto golds = read_bioasq_golds(path);
    REQUIRE(golds.size() == 2);
    CHECK(golds[0].id == "f1");
    CHECK(golds[0].text == "cortisol");
    CHECK(golds[1].text == "BRCA1");
    std::remove(path.c_str());
}

TEST_CASE("prediction and gold files round trip") {
    std::map<std::string, PredictionList> preds;
    preds["q1"] = {{"alpha beta", 4, 5, 0.75}, {"gamma", 7, 7, 0.2}};
    preds["q2"] = {};
    const std::string ppath = "/tmp/bioadapt_test_preds.jsonl";
    write_predictions(ppath, preds);
    auto back = read_predictions(ppath);
    REQUIRE(back.size() == 2);
    CHECK(back["q1"][0].text == "alpha beta");
    CHECK(back["q1"][0].score == 0.75);
    CHECK(back["q1"][1].start_token == 7);
    CHECK(back["q2"].empty());
    std::remove(ppath.c_str());

    std::vector<GoldenAnswer> golds{{"q1", "alpha beta"}, {"q2", "gamma"}};
    const std::string gpath = "/tmp/bioadapt_test_golds.jsonl";
    write_golds(gpath, golds);
    auto gback = read_golds(gpath);
    REQUIRE(gback.size() == 2);
    CHECK(gback[1].text == "gamma");
    std::remove(gpath.c_str());
}

TEST_SUITE_END();
