#include "sst/common.hpp"

namespace sst {

const char* err_name(Err e) {
    switch (e) {
        case Err::Io: return "IoError";
        case Err::Format: return "FormatError";
        case Err::Shape: return "ShapeError";
        case Err::SampleTooLong: return "SampleTooLong";
        case Err::EmptyResponse: return "EmptyResponse";
        case Err::EmptyMask: return "EmptyMask";
        case Err::NonFiniteGradient: return "NonFiniteGradient";
        case Err::LengthMismatch: return "LengthMismatch";
        case Err::Domain: return "DomainError";
        case Err::Index: return "IndexError";
        case Err::EmptyInput: return "EmptyInput";
        case Err::Config: return "ConfigError";
        case Err::Internal: return "InternalError";
    }
    return "UnknownError";
}

uint64_t mix_seed(uint64_t base, uint64_t tag) {
    uint64_t z = base + 0x9e3779b97f4a7c15ull * (tag + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

uint64_t mix_seed(uint64_t base, const std::string& tag) {
    // FNV-1a over the tag bytes, folded into the base seed.
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : tag) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return mix_seed(base, h);
}

}  // namespace sst
