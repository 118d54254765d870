#include "bioadapt/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace bioadapt::corpus {

using nlohmann::json;
using nlohmann::ordered_json;

std::string domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

Domain domain_from_name(const std::string& name) {
    if (name == "source") return Domain::source;
    if (name == "target") return Domain::target;
    throw InputError("unknown domain: " + name);
}

// ---- Vocabulary -------------------------------------------------------------

Vocabulary Vocabulary::build(std::vector<std::string> words) {
    std::sort(words.begin(), words.end());
    words.erase(std::unique(words.begin(), words.end()), words.end());
    Vocabulary v;
    v.tokens_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
    for (auto& w : words) {
        if (w.empty()) continue;
        if (w.front() == '[' && w.back() == ']') continue;  // reserved namespace
        v.tokens_.push_back(w);
    }
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = i;
    return v;
}

std::size_t Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(std::size_t id) const {
    if (id >= tokens_.size()) {
        throw VocabularyError("token id " + std::to_string(id) + " >= vocabulary size " +
                              std::to_string(tokens_.size()));
    }
    return tokens_[id];
}

void Vocabulary::save(const std::string& path) const {
    ordered_json j;
    j["tokens"] = tokens_;
    std::ofstream out(path);
    if (!out) throw InputError("cannot write vocabulary file: " + path);
    out << j.dump() << "\n";
}

Vocabulary Vocabulary::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read vocabulary file: " + path);
    json j;
    in >> j;
    Vocabulary v;
    v.tokens_ = j.at("tokens").get<std::vector<std::string>>();
    if (v.tokens_.size() < 5 || v.tokens_[kMask] != "[MASK]") {
        throw VocabularyError("vocabulary file missing reserved special tokens: " + path);
    }
    for (std::size_t i = 0; i < v.tokens_.size(); ++i) v.index_[v.tokens_[i]] = i;
    return v;
}

// ---- tokenization -----------------------------------------------------------

namespace {

bool is_punct(char c) {
    return std::ispunct(static_cast<unsigned char>(c)) && c != '[' && c != ']';
}

}  // namespace

std::vector<Token> split_tokens(const std::string& text) {
    std::vector<Token> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        if (std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        if (is_punct(text[i])) {
            out.push_back({text.substr(i, 1), {i, i + 1}});
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < n && !std::isspace(static_cast<unsigned char>(text[j])) && !is_punct(text[j]))
            ++j;
        out.push_back({text.substr(i, j - i), {i, j}});
        i = j;
    }
    return out;
}

std::string TokenizedExample::span_text(std::size_t start_token, std::size_t end_token) const {
    if (start_token > end_token || end_token >= input_ids.size()) {
        throw DecodingError("span [" + std::to_string(start_token) + "," +
                            std::to_string(end_token) + "] out of range");
    }
    const CharSpan a = offsets[start_token];
    const CharSpan b = offsets[end_token];
    if (b.end <= a.begin) return "";
    return context_text.substr(a.begin, b.end - a.begin);
}

std::vector<TokenizedExample> tokenize(const std::optional<std::string>& question,
                                       const std::string& context,
                                       std::optional<std::pair<std::size_t, std::string>>
                                           answer_char_span,
                                       const Vocabulary& vocab, const TokenizerLimits& limits,
                                       const std::string& example_id, Domain domain) {
    if (context.empty()) throw InputError("tokenize: empty context for example " + example_id);

    const auto ctx_tokens = split_tokens(context);
    if (ctx_tokens.empty()) throw InputError("tokenize: blank context for example " + example_id);

    // Question region: real tokens truncated to the query limit, or one [MASK].
    std::vector<std::size_t> q_ids;
    if (question) {
        auto q_tokens = split_tokens(*question);
        if (q_tokens.size() > limits.max_query_length) q_tokens.resize(limits.max_query_length);
        for (const auto& tok : q_tokens) q_ids.push_back(vocab.id_of(tok.text));
    } else {
        q_ids.push_back(Vocabulary::kMask);
    }

    // Map the answer character span onto context token indices.
    std::optional<std::pair<std::size_t, std::size_t>> ans_tok;
    if (answer_char_span) {
        const std::size_t a_begin = answer_char_span->first;
        const std::string& a_text = answer_char_span->second;
        const std::size_t a_end = a_begin + a_text.size();
        if (a_end > context.size() || context.compare(a_begin, a_text.size(), a_text) != 0) {
            throw AlignmentError("tokenize: answer span does not match context for example " +
                                 example_id);
        }
        std::optional<std::size_t> s, e;
        for (std::size_t i = 0; i < ctx_tokens.size(); ++i) {
            const CharSpan sp = ctx_tokens[i].span;
            if (!s && sp.end > a_begin) s = i;
            if (sp.begin < a_end) e = i;
        }
        if (!s || !e || *s > *e) {
            throw AlignmentError("tokenize: answer characters fall outside context tokens for " +
                                 example_id);
        }
        ans_tok = {{*s, *e}};
    }

    const std::size_t overhead = q_ids.size() + 3;  // [CLS], [SEP], [SEP]
    if (overhead + 1 > limits.max_sequence_length) {
        throw InputError("tokenize: question leaves no room for context tokens (example " +
                         example_id + ")");
    }
    const std::size_t window_cap = limits.max_sequence_length - overhead;

    std::vector<std::pair<std::size_t, std::size_t>> windows;  // [begin, end) over ctx tokens
    std::size_t start = 0;
    while (true) {
        const std::size_t end = std::min(start + window_cap, ctx_tokens.size());
        windows.emplace_back(start, end);
        if (end == ctx_tokens.size()) break;
        start += limits.doc_stride;
    }

    std::vector<TokenizedExample> out;
    for (std::size_t w = 0; w < windows.size(); ++w) {
        const auto [wb, we] = windows[w];
        TokenizedExample ex;
        ex.example_id = example_id;
        ex.domain = domain;
        ex.context_text = context;
        ex.window_index = w;
        ex.window_count = windows.size();

        ex.input_ids.push_back(Vocabulary::kCls);
        ex.segment_ids.push_back(0);
        ex.offsets.push_back({0, 0});
        const std::size_t q_segment = question ? 0 : limits.mask_segment_id;
        for (std::size_t id : q_ids) {
            ex.input_ids.push_back(id);
            ex.segment_ids.push_back(q_segment);
            ex.offsets.push_back({0, 0});
        }
        ex.input_ids.push_back(Vocabulary::kSep);
        ex.segment_ids.push_back(0);
        ex.offsets.push_back({0, 0});

        ex.context_begin = ex.input_ids.size();
        for (std::size_t i = wb; i < we; ++i) {
            ex.input_ids.push_back(vocab.id_of(ctx_tokens[i].text));
            ex.segment_ids.push_back(1);
            ex.offsets.push_back(ctx_tokens[i].span);
        }
        ex.context_end = ex.input_ids.size();

        ex.input_ids.push_back(Vocabulary::kSep);
        ex.segment_ids.push_back(1);
        ex.offsets.push_back({0, 0});

        // Windows that do not contain the whole answer are kept as unlabeled
        // context windows.
        if (ans_tok && ans_tok->first >= wb && ans_tok->second < we) {
            ex.answer_start = ex.context_begin + (ans_tok->first - wb);
            ex.answer_end = ex.context_begin + (ans_tok->second - wb);
            ex.is_labeled = true;
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<TokenizedExample> tokenize_raw(const RawExample& raw, const Vocabulary& vocab,
                                           const TokenizerLimits& limits) {
    std::optional<std::pair<std::size_t, std::string>> ans;
    if (raw.labeled()) ans = {{*raw.answer_start_char, *raw.answer_text}};
    return tokenize(raw.question, raw.context, ans, vocab, limits, raw.id, raw.domain);
}

// ---- synthetic corpus --------------------------------------------------------

namespace {

const std::vector<std::string>& function_words() {
    static const std::vector<std::string> words = {"what", "is", "the", "of", "in", "."};
    return words;
}

// Template words guaranteed to appear in both domains' emitted text ("the",
// "of", "is", "in", "."); "what" shows up only where questions exist.
constexpr double kBothDomainTemplateWords = 5.0;
constexpr double kQuestionOnlyTemplateWords = 1.0;

// Every sentence opens with one high-frequency word from a small per-domain
// subset, mirroring the skewed word frequencies that make two topics differ.
constexpr std::size_t kHighFrequencyWords = 6;

std::string make_word(Rng& rng) {
    static const char* consonants = "bcdfgklmnprstvz";
    static const char* vowels = "aeiou";
    const std::size_t syllables = 2 + rng.uniform_index(2);
    std::string w;
    for (std::size_t i = 0; i < syllables; ++i) {
        w += consonants[rng.uniform_index(15)];
        w += vowels[rng.uniform_index(5)];
    }
    return w;
}

std::vector<std::string> make_pool(Rng& rng, std::size_t count, std::set<std::string>& used) {
    std::vector<std::string> pool;
    while (pool.size() < count) {
        std::string w = make_word(rng);
        if (used.insert(w).second) pool.push_back(std::move(w));
    }
    return pool;
}

struct SentencePlan {
    std::string marker, prop, ent;
    std::vector<std::string> answer;
};

// "in <marker> the <prop> of <ent> is <answer...> ."
std::size_t sentence_len(const SentencePlan& s) { return 8 + s.answer.size(); }

void append_sentence(std::string& text, const SentencePlan& s, std::size_t* answer_char,
                     std::string* answer_text, bool is_golden) {
    auto push = [&text](const std::string& w) {
        if (!text.empty()) text += ' ';
        text += w;
    };
    push("in");
    push(s.marker);
    push("the");
    push(s.prop);
    push("of");
    push(s.ent);
    push("is");
    for (std::size_t i = 0; i < s.answer.size(); ++i) {
        if (is_golden && i == 0) {
            *answer_char = text.size() + (text.empty() ? 0 : 1);
        }
        push(s.answer[i]);
    }
    if (is_golden) {
        std::string joined;
        for (std::size_t i = 0; i < s.answer.size(); ++i) {
            if (i) joined += ' ';
            joined += s.answer[i];
        }
        *answer_text = joined;
    }
    push(".");
}

RawExample make_example(Rng& rng, const std::vector<std::string>& pool, const CorpusSpec& spec,
                        Domain domain, const std::string& id, bool labeled) {
    const std::size_t target_len =
        spec.context_min_tokens +
        rng.uniform_index(spec.context_max_tokens - spec.context_min_tokens + 1);

    auto draw = [&] { return pool[rng.uniform_index(pool.size())]; };
    const std::size_t n_hf = std::min(kHighFrequencyWords, pool.size());
    auto plan_sentence = [&] {
        SentencePlan s;
        s.marker = pool[rng.uniform_index(n_hf)];
        s.prop = draw();
        s.ent = draw();
        const std::size_t n_ans = 1 + rng.uniform_index(spec.answer_max_words);
        for (std::size_t i = 0; i < n_ans; ++i) s.answer.push_back(draw());
        return s;
    };

    std::vector<SentencePlan> sentences;
    sentences.push_back(plan_sentence());
    std::size_t used = sentence_len(sentences[0]);
    while (true) {
        SentencePlan next = plan_sentence();
        // The question keys on (prop, ent); keep the golden pair unique.
        while (next.prop == sentences[0].prop && next.ent == sentences[0].ent) {
            next = plan_sentence();
        }
        const std::size_t len = sentence_len(next);
        if (sentences.size() >= 2 && used + len > target_len) break;
        used += len;
        sentences.push_back(std::move(next));
        if (used >= target_len) break;
    }

    // The golden sentence position must not be a cue; move it to a random slot.
    const std::size_t golden = rng.uniform_index(sentences.size());
    std::swap(sentences[0], sentences[golden]);
    const SentencePlan golden_plan = sentences[golden];

    std::string context;
    std::size_t answer_char = 0;
    std::string answer_text;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
        append_sentence(context, sentences[i], &answer_char, &answer_text, i == golden);
    }

    RawExample ex;
    ex.id = id;
    ex.domain = domain;
    ex.context = context;
    if (labeled) {
        ex.question = "what is the " + golden_plan.prop + " of " + golden_plan.ent;
        ex.answer_text = answer_text;
        ex.answer_start_char = answer_char;
    }
    return ex;
}

}  // namespace

void CorpusSpec::validate(const TokenizerLimits& limits) const {
    if (source_labeled < 2) {
        throw SpecError("corpus spec: need at least 2 source examples for triplet sampling");
    }
    if (target_unlabeled + target_labeled == 0) {
        throw SpecError("corpus spec: target training set must be nonempty");
    }
    if (target_test == 0) throw SpecError("corpus spec: target test set must be nonempty");
    if (topic_words_per_domain == 0) throw SpecError("corpus spec: empty topic pool");
    if (shared_vocab_fraction < 0.0 || shared_vocab_fraction > 1.0) {
        throw SpecError("corpus spec: shared_vocab_fraction must lie in [0,1]");
    }
    if (context_max_tokens < context_min_tokens) {
        throw SpecError("corpus spec: context_max_tokens < context_min_tokens");
    }
    if (context_max_tokens + 9 > limits.max_sequence_length) {
        throw SpecError("corpus spec: context range exceeds tokenizer window");
    }
    if (answer_max_words == 0 || 2 * (8 + answer_max_words) > context_min_tokens) {
        throw SpecError("corpus spec: requested answer length exceeds the context length range");
    }
    if (answer_max_words > limits.max_answer_length) {
        throw SpecError("corpus spec: requested answer length exceeds the answer limit");
    }
}

GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    const double s = spec.shared_vocab_fraction;
    const std::size_t t = spec.topic_words_per_domain;

    std::set<std::string> used(function_words().begin(), function_words().end());
    std::vector<std::string> source_pool, target_pool, shared_pool;
    if (s >= 1.0) {
        source_pool = make_pool(rng, t, used);
        target_pool = source_pool;
    } else {
        // The measured token-set overlap counts template words too, so solve
        //   (shared + B) / (2T + shared + B + Q) = s
        // where B template words land in both domains and Q only where
        // questions exist.
        const double b = kBothDomainTemplateWords;
        const double q = kQuestionOnlyTemplateWords;
        const double want = (s * (2.0 * static_cast<double>(t) + b + q) - b) / (1.0 - s);
        if (want < -0.5) {
            throw SpecError(
                "corpus spec: shared_vocab_fraction too small; template words alone exceed it");
        }
        const std::size_t shared_count = static_cast<std::size_t>(std::max(0.0, want) + 0.5);
        source_pool = make_pool(rng, t, used);
        target_pool = make_pool(rng, t, used);
        shared_pool = make_pool(rng, shared_count, used);
        source_pool.insert(source_pool.end(), shared_pool.begin(), shared_pool.end());
        target_pool.insert(target_pool.end(), shared_pool.begin(), shared_pool.end());
    }

    std::vector<std::string> all_words(used.begin(), used.end());
    GeneratedCorpus out;
    out.vocab = Vocabulary::build(all_words);

    char buf[32];
    for (std::size_t i = 0; i < spec.source_labeled; ++i) {
        std::snprintf(buf, sizeof buf, "src-%05zu", i);
        out.source_train.push_back(make_example(rng, source_pool, spec, Domain::source, buf, true));
    }
    const std::size_t target_total = spec.target_labeled + spec.target_unlabeled;
    for (std::size_t i = 0; i < target_total; ++i) {
        std::snprintf(buf, sizeof buf, "tgt-%05zu", i);
        const bool labeled = i < spec.target_labeled;
        out.target_train.push_back(
            make_example(rng, target_pool, spec, Domain::target, buf, labeled));
    }
    for (std::size_t i = 0; i < spec.target_test; ++i) {
        std::snprintf(buf, sizeof buf, "tst-%05zu", i);
        out.target_test.push_back(make_example(rng, target_pool, spec, Domain::target, buf, true));
    }
    return out;
}

// ---- files --------------------------------------------------------------------

void write_jsonl(const std::string& path, const std::vector<RawExample>& examples) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write dataset file: " + path);
    for (const auto& ex : examples) {
        ordered_json j;
        j["id"] = ex.id;
        j["domain"] = domain_name(ex.domain);
        j["context"] = ex.context;
        if (ex.question)
            j["question"] = *ex.question;
        else
            j["question"] = nullptr;
        if (ex.labeled()) {
            j["answer"] = {{"text", *ex.answer_text},
                           {"start_char", *ex.answer_start_char}};
        } else {
            j["answer"] = nullptr;
        }
        out << j.dump() << "\n";
    }
}

std::vector<RawExample> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read dataset file: " + path);
    std::vector<RawExample> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw InputError(path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
        }
        RawExample ex;
        ex.id = j.at("id").get<std::string>();
        ex.domain = domain_from_name(j.at("domain").get<std::string>());
        ex.context = j.at("context").get<std::string>();
        if (j.contains("question") && !j["question"].is_null())
            ex.question = j["question"].get<std::string>();
        if (j.contains("answer") && !j["answer"].is_null()) {
            ex.answer_text = j["answer"].at("text").get<std::string>();
            ex.answer_start_char = j["answer"].at("start_char").get<std::size_t>();
        }
        out.push_back(std::move(ex));
    }
    return out;
}

std::vector<RawExample> from_squad_json(const std::string& path, Domain domain) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read SQuAD file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::parse_error& e) {
        throw InputError(path + ": bad JSON: " + e.what());
    }
    std::vector<RawExample> out;
    for (const auto& article : j.at("data")) {
        for (const auto& para : article.at("paragraphs")) {
            const std::string context = para.at("context").get<std::string>();
            for (const auto& qa : para.at("qas")) {
                RawExample ex;
                ex.id = qa.at("id").get<std::string>();
                ex.domain = domain;
                ex.context = context;
                ex.question = qa.at("question").get<std::string>();
                const auto& answers = qa.at("answers");
                if (!answers.empty()) {
                    ex.answer_text = answers[0].at("text").get<std::string>();
                    ex.answer_start_char = answers[0].at("answer_start").get<std::size_t>();
                }
                out.push_back(std::move(ex));
            }
        }
    }
    return out;
}

}  // namespace bioadapt::corpus
