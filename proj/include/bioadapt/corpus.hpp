#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "bioadapt/errors.hpp"
#include "bioadapt/rng.hpp"

namespace bioadapt::corpus {

enum class Domain { source, target };

std::string domain_name(Domain d);
Domain domain_from_name(const std::string& name);

/// Token-id table with fixed special tokens. Word ids are assigned in sorted
/// order so the mapping is stable across runs for the same word set.
class Vocabulary {
  public:
    static constexpr std::size_t kPad = 0;
    static constexpr std::size_t kUnk = 1;
    static constexpr std::size_t kCls = 2;
    static constexpr std::size_t kSep = 3;
    static constexpr std::size_t kMask = 4;

    static Vocabulary build(std::vector<std::string> words);

    std::size_t size() const { return tokens_.size(); }
    std::size_t id_of(const std::string& token) const;  // kUnk when absent
    const std::string& token(std::size_t id) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }

    void save(const std::string& path) const;
    static Vocabulary load(const std::string& path);

  private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Character range [begin, end) into the raw context string.
struct CharSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
};

/// One raw dataset record, mirroring the JSON-lines schema.
struct RawExample {
    std::string id;
    Domain domain = Domain::source;
    std::string context;
    std::optional<std::string> question;  // absent for unlabeled target contexts
    std::optional<std::string> answer_text;
    std::optional<std::size_t> answer_start_char;

    bool labeled() const { return question && answer_text && answer_start_char; }
};

/// One MRC training window: {[CLS], Q, [SEP], C, [SEP]} token ids.
struct TokenizedExample {
    std::string example_id;
    Domain domain = Domain::source;
    std::vector<std::size_t> input_ids;
    std::vector<std::size_t> segment_ids;
    std::optional<std::size_t> answer_start;  // index into input_ids
    std::optional<std::size_t> answer_end;
    std::vector<CharSpan> offsets;  // per input position; context tokens carry real spans
    bool is_labeled = false;
    std::size_t context_begin = 0;  // [context_begin, context_end) within input_ids
    std::size_t context_end = 0;
    std::size_t window_index = 0;
    std::size_t window_count = 1;
    std::string context_text;

    std::string span_text(std::size_t start_token, std::size_t end_token) const;
};

struct TokenizerLimits {
    std::size_t max_query_length = 64;
    std::size_t max_answer_length = 30;
    std::size_t max_sequence_length = 384;
    std::size_t doc_stride = 128;
    std::size_t mask_segment_id = 0;  // segment id used for the [MASK] question slot
};

struct Token {
    std::string text;
    CharSpan span;
};

/// Whitespace-plus-punctuation tokenization with character offsets.
std::vector<Token> split_tokens(const std::string& text);

/// Sentinel question meaning "unlabeled target context": the question region
/// becomes exactly one [MASK] token.
inline constexpr const char* kMaskQuestion = nullptr;

std::vector<TokenizedExample> tokenize(const std::optional<std::string>& question,
                                       const std::string& context,
                                       std::optional<std::pair<std::size_t, std::string>>
                                           answer_char_span,  // (start_char, text)
                                       const Vocabulary& vocab, const TokenizerLimits& limits,
                                       const std::string& example_id, Domain domain);

std::vector<TokenizedExample> tokenize_raw(const RawExample& raw, const Vocabulary& vocab,
                                           const TokenizerLimits& limits);

// ---- synthetic two-domain corpus -------------------------------------------

struct CorpusSpec {
    std::size_t topic_words_per_domain = 120;
    double shared_vocab_fraction = 0.15;
    std::size_t source_labeled = 2000;
    std::size_t target_unlabeled = 1000;
    std::size_t target_labeled = 0;
    std::size_t target_test = 200;
    std::size_t context_min_tokens = 20;
    std::size_t context_max_tokens = 32;
    std::size_t answer_max_words = 2;
    std::uint64_t seed = 42;

    void validate(const TokenizerLimits& limits = {}) const;
};

struct GeneratedCorpus {
    std::vector<RawExample> source_train;
    std::vector<RawExample> target_train;
    std::vector<RawExample> target_test;
    Vocabulary vocab;
};

GeneratedCorpus generate_corpus(const CorpusSpec& spec);

// ---- dataset files ----------------------------------------------------------

void write_jsonl(const std::string& path, const std::vector<RawExample>& examples);
std::vector<RawExample> read_jsonl(const std::string& path);

/// SQuAD-style adapter: {"data":[{"paragraphs":[{"context","qas":[...]}]}]}.
std::vector<RawExample> from_squad_json(const std::string& path, Domain domain);

}  // namespace bioadapt::corpus
