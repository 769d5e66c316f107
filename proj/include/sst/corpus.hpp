#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sst/common.hpp"

namespace sst {

using TokenId = int32_t;

// Reserved special-token block. Byte b maps to id b + kNumSpecials.
inline constexpr TokenId kPadToken = 0;
inline constexpr TokenId kBosToken = 1;
inline constexpr TokenId kEndToken = 2;
inline constexpr TokenId kUserToken = 3;
inline constexpr TokenId kAssistantToken = 4;
inline constexpr int kNumSpecials = 5;
inline constexpr int kVocabSize = 256 + kNumSpecials;

// Byte-level tokenization: total, lossless, no external vocabulary.
std::vector<TokenId> tokenize(std::string_view text);

// Inverse of tokenize. Rejects special-token ids.
std::string detokenize(std::span<const TokenId> ids);

// Printable form of a single token, specials rendered as <|...|>.
std::string token_display(TokenId id);

struct RawRecord {
    std::string prompt;
    std::string response;
};

// Chat template. The default collapses the user/assistant role tags to
// single reserved ids; with_text_tags builds tags from literal strings.
struct TemplateSpec {
    std::vector<TokenId> user_tag{kUserToken};
    std::vector<TokenId> assistant_tag{kAssistantToken};
    size_t max_seq_len = 256;

    static TemplateSpec with_text_tags(std::string_view user,
                                       std::string_view assistant,
                                       size_t max_seq_len = 256);
};

struct TokenizedSample {
    std::vector<TokenId> ids;
    size_t prompt_len = 0;

    size_t total_len() const { return ids.size(); }
    size_t resp_len() const { return ids.size() - prompt_len; }
    // Prompt positions are [0, prompt_len), response positions
    // [prompt_len, total_len).
};

// ids = user_tag ++ tokenize(prompt) ++ assistant_tag ++ tokenize(response) ++ END.
// prompt_len covers through the assistant tag.
// Throws EmptyResponse / SampleTooLong; over-long records are never truncated.
TokenizedSample assemble_sample(const RawRecord& record, const TemplateSpec& tmpl);

enum class Split { train, heldout };

struct SkipReport {
    size_t parse_error = 0;
    size_t missing_field = 0;
    size_t empty_response = 0;
    size_t too_long = 0;

    size_t total() const {
        return parse_error + missing_field + empty_response + too_long;
    }
    std::string describe() const;
};

struct Corpus {
    std::vector<TokenizedSample> samples;
    Split split = Split::train;
    uint64_t seed = 0;
    SkipReport skipped;

    size_t size() const { return samples.size(); }
};

// Line-delimited JSON, one {"prompt": ..., "response": ...} object per line.
// Malformed lines are counted, not fatal, unless every line fails.
Corpus load_corpus(const std::string& path, const TemplateSpec& tmpl,
                   uint64_t seed, Split split = Split::train);

}  // namespace sst
