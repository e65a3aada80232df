// Synthetic multi-factor preference data with ground-truth latent factors,
// byte-level tokenization, label-flip corruption, and JSONL round-trip I/O.
//
// Serialized triples store pre-tokenization strings plus the flipped flag;
// loading rebuilds the model-ready token form ([BOS] prompt [FLIP]? / y [EOS]).
#pragma once

#include <string>
#include <vector>

#include "lpc/rng.hpp"
#include "lpc/transformer.hpp"

namespace lpc {

// token space: bytes 0..255, then the specials
inline constexpr int kBosId = 256;
inline constexpr int kEosId = 257;
inline constexpr int kFlipId = 258;
inline constexpr int kPadId = 259;
inline constexpr int kVocabSize = 260;

TokenSeq tokenize(const std::string& text, Role role = Role::kPrompt);
// Renders bytes; known specials print as [BOS]/[EOS]/[FLIP]/[PAD]; ids outside
// the vocabulary throw.
std::string detokenize(const std::vector<int>& ids);

enum class FactorRule { kBrevity, kVerbosity, kDensity, kNoRepeat };

struct FactorSpec {
    int factor_id = 0;
    std::string name;
    FactorRule rule = FactorRule::kBrevity;
    std::string marker;  // uppercase+digit tag embedded in the prompt
};

// The four stock factors with markers QB7 / QV2 / QD9 / QR4.
std::vector<FactorSpec> default_factors();

struct PreferenceTriple {
    TokenSeq prompt;    // [BOS] + bytes (+ [FLIP] when flipped)
    TokenSeq chosen;    // bytes + [EOS]
    TokenSeq rejected;  // bytes + [EOS]
    std::string source; // factor name(s), evaluation only
    bool flipped = false;

    bool operator==(const PreferenceTriple& o) const {
        return prompt.ids == o.prompt.ids && chosen.ids == o.chosen.ids &&
               rejected.ids == o.rejected.ids && source == o.source && flipped == o.flipped;
    }
};

struct SamplerParams {
    int min_len = 8;
    int max_len = 48;
    int max_tie_attempts = 20;
    bool hard_mode = false;  // two factors per prompt, 2:1 marker multiplicity
};

struct GenResult {
    std::vector<PreferenceTriple> triples;
    long ties_regenerated = 0;
    long skipped = 0;  // slots abandoned after max_tie_attempts
};

// brevity = -len; verbosity = +len; density = digit fraction;
// repetition-aversion = -(repeated bigram count). Specials are ignored.
double factor_score(const FactorSpec& factor, const TokenSeq& prompt,
                    const TokenSeq& completion);

GenResult gen_synthetic(long n, const std::vector<FactorSpec>& factors,
                        const SamplerParams& params, RngStream& rng);

// Swaps chosen/rejected, appends [FLIP] to the prompt and toggles the flag on
// a Bernoulli(rho) subset.
std::vector<PreferenceTriple> corrupt_flip(const std::vector<PreferenceTriple>& ds, double rho,
                                           RngStream& rng);

void write_jsonl(const std::string& path, const std::vector<PreferenceTriple>& triples);
std::vector<PreferenceTriple> read_jsonl(const std::string& path);

}  // namespace lpc
