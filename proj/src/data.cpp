#include "lpc/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace lpc {

namespace {

using ordered_json = nlohmann::ordered_json;

std::string strip_specials(const TokenSeq& t) {
    std::vector<int> bytes;
    bytes.reserve(t.ids.size());
    for (int id : t.ids)
        if (id < 256) bytes.push_back(id);
    return detokenize(bytes);
}

int completion_length(const TokenSeq& t) {
    int n = 0;
    for (int id : t.ids)
        if (id < 256) ++n;
    return n;
}

int repeated_bigram_count(const TokenSeq& t) {
    std::map<std::pair<int, int>, int> seen;
    int repeats = 0;
    int prev = -1;
    for (int id : t.ids) {
        if (id >= 256) continue;
        if (prev >= 0) {
            const int c = ++seen[{prev, id}];
            if (c > 1) ++repeats;
        }
        prev = id;
    }
    return repeats;
}

double digit_fraction(const TokenSeq& t) {
    int digits = 0, total = 0;
    for (int id : t.ids) {
        if (id >= 256) continue;
        ++total;
        if (id >= '0' && id <= '9') ++digits;
    }
    return total == 0 ? 0.0 : static_cast<double>(digits) / static_cast<double>(total);
}

// maps a raw factor score into [0,1] so hard-mode mixtures are comparable
double normalized_score(const FactorSpec& f, const SamplerParams& p, double raw) {
    const double span = static_cast<double>(p.max_len - p.min_len);
    switch (f.rule) {
        case FactorRule::kBrevity:
            return (raw + p.max_len) / span;  // raw = -len
        case FactorRule::kVerbosity:
            return (raw - p.min_len) / span;
        case FactorRule::kDensity:
            return raw;
        case FactorRule::kNoRepeat: {
            const double worst = p.max_len / 2.0;  // raw = -repeats
            const double v = 1.0 + raw / worst;
            return v < 0.0 ? 0.0 : v;
        }
    }
    throw std::invalid_argument("normalized_score: unknown factor rule");
}

std::string random_completion(RngStream& r, const SamplerParams& p) {
    const int len = p.min_len + r.next_int(p.max_len - p.min_len + 1);
    const double digit_prop = 0.05 + 0.65 * r.next_unit_open();
    const double repeat_prop = 0.6 * r.next_unit_open();
    std::string s;
    s.reserve(static_cast<std::size_t>(len));
    while (static_cast<int>(s.size()) < len) {
        if (s.size() >= 2 && static_cast<int>(s.size()) + 2 <= len &&
            r.next_unit_open() < repeat_prop) {
            // duplicate the trailing bigram
            s.push_back(s[s.size() - 2]);
            s.push_back(s[s.size() - 2]);
            continue;
        }
        if (r.next_unit_open() < digit_prop)
            s.push_back(static_cast<char>('0' + r.next_int(10)));
        else
            s.push_back(static_cast<char>('a' + r.next_int(26)));
    }
    return s;
}

std::string random_filler(RngStream& r) {
    const int len = 12 + r.next_int(13);
    std::string s;
    s.reserve(static_cast<std::size_t>(len));
    for (int i = 0; i < len; ++i) {
        if (i > 0 && i + 1 < len && r.next_unit_open() < 0.15)
            s.push_back(' ');
        else
            s.push_back(static_cast<char>('a' + r.next_int(26)));
    }
    return s;
}

// Inserts every marker at an independent random offset of the filler in one
// pass, so a later marker can never split an earlier one.
std::string with_markers(const std::string& filler,
                         const std::vector<const std::string*>& markers, RngStream& r) {
    std::vector<std::pair<std::size_t, const std::string*>> at;
    at.reserve(markers.size());
    for (const std::string* m : markers)
        at.emplace_back(
            static_cast<std::size_t>(r.next_int(static_cast<int>(filler.size()) + 1)), m);
    std::stable_sort(at.begin(), at.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::string s;
    s.reserve(filler.size() + 3 * markers.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i <= filler.size(); ++i) {
        while (k < at.size() && at[k].first == i) s += *at[k++].second;
        if (i < filler.size()) s.push_back(filler[i]);
    }
    return s;
}

TokenSeq prompt_tokens(const std::string& text) {
    TokenSeq t;
    t.role = Role::kPrompt;
    t.ids.push_back(kBosId);
    for (unsigned char c : text) t.ids.push_back(static_cast<int>(c));
    return t;
}

TokenSeq completion_tokens(const std::string& text) {
    TokenSeq t;
    t.role = Role::kCompletion;
    for (unsigned char c : text) t.ids.push_back(static_cast<int>(c));
    t.ids.push_back(kEosId);
    return t;
}

}  // namespace

// ---- tokenizer ---------------------------------------------------------------

TokenSeq tokenize(const std::string& text, Role role) {
    TokenSeq t;
    t.role = role;
    t.ids.reserve(text.size());
    for (unsigned char c : text) t.ids.push_back(static_cast<int>(c));
    return t;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id >= 0 && id < 256) {
            out.push_back(static_cast<char>(id));
        } else if (id == kBosId) {
            out += "[BOS]";
        } else if (id == kEosId) {
            out += "[EOS]";
        } else if (id == kFlipId) {
            out += "[FLIP]";
        } else if (id == kPadId) {
            out += "[PAD]";
        } else {
            throw std::invalid_argument("detokenize: unknown token id " + std::to_string(id));
        }
    }
    return out;
}

// ---- factors -------------------------------------------------------------------

std::vector<FactorSpec> default_factors() {
    return {
        {0, "brevity", FactorRule::kBrevity, "QB7"},
        {1, "verbosity", FactorRule::kVerbosity, "QV2"},
        {2, "density", FactorRule::kDensity, "QD9"},
        {3, "norepeat", FactorRule::kNoRepeat, "QR4"},
    };
}

double factor_score(const FactorSpec& factor, const TokenSeq& prompt,
                    const TokenSeq& completion) {
    (void)prompt;  // rules are content-based on the completion
    switch (factor.rule) {
        case FactorRule::kBrevity:
            return -static_cast<double>(completion_length(completion));
        case FactorRule::kVerbosity:
            return static_cast<double>(completion_length(completion));
        case FactorRule::kDensity:
            return digit_fraction(completion);
        case FactorRule::kNoRepeat:
            return -static_cast<double>(repeated_bigram_count(completion));
    }
    throw std::invalid_argument("factor_score: unknown factor rule " +
                                std::to_string(static_cast<int>(factor.rule)));
}

// ---- generation ----------------------------------------------------------------

GenResult gen_synthetic(long n, const std::vector<FactorSpec>& factors,
                        const SamplerParams& params, RngStream& rng) {
    if (n < 1) throw std::invalid_argument("gen_synthetic: n must be >= 1");
    if (factors.empty()) throw std::invalid_argument("gen_synthetic: need at least one factor");
    if (params.min_len < 4 || params.max_len <= params.min_len)
        throw std::invalid_argument("gen_synthetic: bad completion length range");

    GenResult out;
    out.triples.reserve(static_cast<std::size_t>(n));
    const int nf = static_cast<int>(factors.size());

    for (long i = 0; i < n; ++i) {
        RngStream s = rng.derive("triple", static_cast<std::uint64_t>(i));

        const int fi = s.next_int(nf);
        const FactorSpec& primary = factors[static_cast<std::size_t>(fi)];
        const FactorSpec* secondary = nullptr;
        if (params.hard_mode && nf > 1) {
            int fj = s.next_int(nf - 1);
            if (fj >= fi) ++fj;
            secondary = &factors[static_cast<std::size_t>(fj)];
        }

        std::vector<const std::string*> marks{&primary.marker};
        if (secondary) {
            marks.push_back(&primary.marker);  // 2:1 multiplicity
            marks.push_back(&secondary->marker);
        }
        const TokenSeq prompt = prompt_tokens(with_markers(random_filler(s), marks, s));

        auto score = [&](const TokenSeq& y) {
            if (!secondary) return factor_score(primary, prompt, y);
            const double a = normalized_score(primary, params, factor_score(primary, prompt, y));
            const double b =
                normalized_score(*secondary, params, factor_score(*secondary, prompt, y));
            return (2.0 * a + b) / 3.0;
        };

        bool emitted = false;
        for (int attempt = 0; attempt < params.max_tie_attempts; ++attempt) {
            const TokenSeq ya = completion_tokens(random_completion(s, params));
            const TokenSeq yb = completion_tokens(random_completion(s, params));
            const double sa = score(ya), sb = score(yb);
            if (sa == sb) {
                ++out.ties_regenerated;
                continue;
            }
            PreferenceTriple t;
            t.prompt = prompt;
            t.chosen = sa > sb ? ya : yb;
            t.rejected = sa > sb ? yb : ya;
            t.source = secondary ? primary.name + "+" + secondary->name : primary.name;
            t.flipped = false;
            out.triples.push_back(std::move(t));
            emitted = true;
            break;
        }
        if (!emitted) ++out.skipped;
    }
    return out;
}

std::vector<PreferenceTriple> corrupt_flip(const std::vector<PreferenceTriple>& ds, double rho,
                                           RngStream& rng) {
    if (rho < 0.0 || rho > 1.0)
        throw std::invalid_argument("corrupt_flip: rho must lie in [0,1]");
    std::vector<PreferenceTriple> out = ds;
    if (rho == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) {
        RngStream s = rng.derive("flip", static_cast<std::uint64_t>(i));
        if (rho < 1.0 && s.next_unit_open() >= rho) continue;
        PreferenceTriple& t = out[i];
        std::swap(t.chosen, t.rejected);
        t.prompt.ids.push_back(kFlipId);
        t.flipped = !t.flipped;
    }
    return out;
}

// ---- JSONL ---------------------------------------------------------------------

void write_jsonl(const std::string& path, const std::vector<PreferenceTriple>& triples) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("write_jsonl: cannot open " + path);
    for (const PreferenceTriple& t : triples) {
        ordered_json j;
        j["prompt"] = strip_specials(t.prompt);
        j["chosen"] = strip_specials(t.chosen);
        j["rejected"] = strip_specials(t.rejected);
        j["source"] = t.source;
        j["flipped"] = t.flipped;
        f << j.dump() << '\n';
    }
    if (!f) throw std::runtime_error("write_jsonl: write failed for " + path);
}

std::vector<PreferenceTriple> read_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_jsonl: cannot open " + path);
    std::vector<PreferenceTriple> out;
    std::string line;
    long line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        if (line.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
        try {
            PreferenceTriple t;
            const std::string prompt = j.at("prompt").get<std::string>();
            const std::string chosen = j.at("chosen").get<std::string>();
            const std::string rejected = j.at("rejected").get<std::string>();
            t.source = j.at("source").get<std::string>();
            t.flipped = j.at("flipped").get<bool>();
            t.prompt = prompt_tokens(prompt);
            if (t.flipped) t.prompt.ids.push_back(kFlipId);
            t.chosen = completion_tokens(chosen);
            t.rejected = completion_tokens(rejected);
            out.push_back(std::move(t));
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error(path + ": line " + std::to_string(line_no) + ": " +
                                     e.what());
        }
    }
    return out;
}

}  // namespace lpc
