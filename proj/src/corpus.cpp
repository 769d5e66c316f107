#include "sst/corpus.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace sst {

std::vector<TokenId> tokenize(std::string_view text) {
    std::vector<TokenId> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) {
        ids.push_back(static_cast<TokenId>(c) + kNumSpecials);
    }
    return ids;
}

std::string detokenize(std::span<const TokenId> ids) {
    std::string out;
    out.reserve(ids.size());
    for (TokenId id : ids) {
        if (id < kNumSpecials || id >= kVocabSize) {
            fail(Err::Domain, "detokenize: id " + std::to_string(id) +
                                  " is not a byte token");
        }
        out.push_back(static_cast<char>(id - kNumSpecials));
    }
    return out;
}

std::string token_display(TokenId id) {
    switch (id) {
        case kPadToken: return "<|pad|>";
        case kBosToken: return "<|bos|>";
        case kEndToken: return "<|end|>";
        case kUserToken: return "<|user|>";
        case kAssistantToken: return "<|assistant|>";
        default: break;
    }
    if (id < kNumSpecials || id >= kVocabSize) {
        return "<|invalid:" + std::to_string(id) + "|>";
    }
    return std::string(1, static_cast<char>(id - kNumSpecials));
}

TemplateSpec TemplateSpec::with_text_tags(std::string_view user,
                                          std::string_view assistant,
                                          size_t max_seq_len) {
    TemplateSpec t;
    t.user_tag = tokenize(user);
    t.assistant_tag = tokenize(assistant);
    t.max_seq_len = max_seq_len;
    return t;
}

namespace {

bool is_blank(const std::string& s) {
    for (char c : s) {
        if (!std::isspace(static_cast<unsigned char>(c))) return false;
    }
    return true;
}

}  // namespace

TokenizedSample assemble_sample(const RawRecord& record, const TemplateSpec& tmpl) {
    if (is_blank(record.response)) {
        fail(Err::EmptyResponse, "assemble_sample: response is empty");
    }

    TokenizedSample s;
    s.ids = tmpl.user_tag;
    const auto prompt_ids = tokenize(record.prompt);
    s.ids.insert(s.ids.end(), prompt_ids.begin(), prompt_ids.end());
    s.ids.insert(s.ids.end(), tmpl.assistant_tag.begin(), tmpl.assistant_tag.end());
    s.prompt_len = s.ids.size();
    if (s.prompt_len == 0) {
        fail(Err::Shape, "assemble_sample: prompt segment is empty");
    }

    const auto resp_ids = tokenize(record.response);
    s.ids.insert(s.ids.end(), resp_ids.begin(), resp_ids.end());
    s.ids.push_back(kEndToken);

    if (s.total_len() > tmpl.max_seq_len) {
        fail(Err::SampleTooLong,
             "assemble_sample: length " + std::to_string(s.total_len()) +
                 " exceeds max_seq_len " + std::to_string(tmpl.max_seq_len));
    }
    return s;
}

std::string SkipReport::describe() const {
    std::ostringstream os;
    os << "skipped=" << total() << " (parse_error=" << parse_error
       << ", missing_field=" << missing_field
       << ", empty_response=" << empty_response << ", too_long=" << too_long
       << ")";
    return os.str();
}

Corpus load_corpus(const std::string& path, const TemplateSpec& tmpl,
                   uint64_t seed, Split split) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(Err::Io, "load_corpus: cannot open " + path);
    }

    Corpus corpus;
    corpus.split = split;
    corpus.seed = seed;

    std::string line;
    while (std::getline(in, line)) {
        if (is_blank(line)) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            corpus.skipped.parse_error++;
            continue;
        }
        if (!j.contains("prompt") || !j.contains("response") ||
            !j["prompt"].is_string() || !j["response"].is_string()) {
            corpus.skipped.missing_field++;
            continue;
        }
        RawRecord rec{j["prompt"].get<std::string>(),
                      j["response"].get<std::string>()};
        try {
            corpus.samples.push_back(assemble_sample(rec, tmpl));
        } catch (const Error& e) {
            if (e.code() == Err::EmptyResponse) {
                corpus.skipped.empty_response++;
            } else if (e.code() == Err::SampleTooLong) {
                corpus.skipped.too_long++;
            } else {
                throw;
            }
        }
    }

    if (corpus.samples.empty()) {
        fail(Err::Format, "load_corpus: no usable record in " + path + " (" +
                              corpus.skipped.describe() + ")");
    }
    return corpus;
}

}  // namespace sst
