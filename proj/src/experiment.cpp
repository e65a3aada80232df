#include "lpc/experiment.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace lpc {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::string init_name(CodebookInit init) {
    return init == CodebookInit::kZero ? "zero" : "gaussian";
}

// the slice of the config that determines the SFT reference model
std::string describe_sft_slice(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << "data.n_train=" << cfg.data.n_train << '\n'
       << "data.seed=" << cfg.data.seed << '\n'
       << "data.min_len=" << cfg.data.sampler.min_len << '\n'
       << "data.max_len=" << cfg.data.sampler.max_len << '\n'
       << "data.max_tie_attempts=" << cfg.data.sampler.max_tie_attempts << '\n'
       << "data.hard_mode=" << (cfg.data.sampler.hard_mode ? 1 : 0) << '\n'
       << "data.flip_rho=" << fmt(cfg.data.flip_rho) << '\n'
       << "model.vocab_size=" << cfg.model.vocab_size << '\n'
       << "model.context_length=" << cfg.model.context_length << '\n'
       << "model.d_model=" << cfg.model.d_model << '\n'
       << "model.n_layers=" << cfg.model.n_layers << '\n'
       << "model.n_heads=" << cfg.model.n_heads << '\n'
       << "model.ffn_width=" << cfg.model.ffn_width << '\n'
       << "sft.peak_lr=" << fmt(cfg.sft.peak_lr) << '\n'
       << "sft.warmup_frac=" << fmt(cfg.sft.warmup_frac) << '\n'
       << "sft.total_steps=" << cfg.sft.total_steps << '\n'
       << "sft.batch_size=" << cfg.sft.batch_size << '\n'
       << "seed=" << cfg.seed << '\n';
    return os.str();
}

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string outcome_path(const std::string& cache_dir, const ExperimentConfig& cfg) {
    return (fs::path(cache_dir) / ("run-" + hash_hex(experiment_hash(cfg)) + ".json"))
        .string();
}

std::string sft_path(const std::string& cache_dir, const ExperimentConfig& cfg) {
    const std::uint64_t h = fnv1a64(describe_sft_slice(cfg));
    return (fs::path(cache_dir) / ("sft-" + hash_hex(h) + ".bin")).string();
}

ordered_json outcome_to_json(const RunOutcome& o) {
    ordered_json j;
    j["accuracy"] = o.accuracy;
    j["per_source"] = o.per_source;
    j["purity"] = o.purity;
    j["adjusted_rand"] = o.adjusted_rand;
    j["final_loss"] = o.final_loss;
    j["total_steps"] = o.total_steps;
    j["n_train"] = o.n_train;
    j["n_test"] = o.n_test;
    j["sft_seconds"] = o.sft_seconds;
    j["align_seconds"] = o.align_seconds;
    return j;
}

RunOutcome outcome_from_json(const ordered_json& j) {
    RunOutcome o;
    o.accuracy = j.at("accuracy").get<double>();
    o.per_source = j.at("per_source").get<std::map<std::string, double>>();
    o.purity = j.at("purity").get<double>();
    o.adjusted_rand = j.at("adjusted_rand").get<double>();
    o.final_loss = j.at("final_loss").get<double>();
    o.total_steps = j.at("total_steps").get<long>();
    o.n_train = j.at("n_train").get<long>();
    o.n_test = j.at("n_test").get<long>();
    o.sft_seconds = j.at("sft_seconds").get<double>();
    o.align_seconds = j.at("align_seconds").get<double>();
    return o;
}

bool try_load_outcome(const std::string& path, const std::string& config_echo,
                      RunOutcome& out) {
    std::ifstream f(path);
    if (!f) return false;
    try {
        const ordered_json j = ordered_json::parse(f);
        if (j.at("config").get<std::string>() != config_echo) {
            std::cerr << "run cache: config mismatch at " << path << ", recomputing\n";
            return false;
        }
        out = outcome_from_json(j.at("outcome"));
        out.from_cache = true;
        return true;
    } catch (const std::exception& e) {
        std::cerr << "run cache: unreadable " << path << " (" << e.what()
                  << "), recomputing\n";
        return false;
    }
}

void store_outcome(const std::string& path, const std::string& config_echo,
                   const RunOutcome& o) {
    ordered_json j;
    j["config"] = config_echo;
    j["outcome"] = outcome_to_json(o);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("run cache: cannot open " + path);
    f << j.dump(2) << '\n';
}

}  // namespace

void DataSpec::validate() const {
    if (n_train < 1) throw std::invalid_argument("DataSpec: n_train must be >= 1");
    if (n_test < 1) throw std::invalid_argument("DataSpec: n_test must be >= 1");
    if (flip_rho < 0.0 || flip_rho > 1.0)
        throw std::invalid_argument("DataSpec: flip_rho must lie in [0, 1]");
}

SplitDataset build_dataset(const DataSpec& spec) {
    spec.validate();
    const RngStream root(spec.seed);
    RngStream train_rng = root.derive("train");
    RngStream test_rng = root.derive("test");
    SplitDataset ds;
    ds.train = gen_synthetic(spec.n_train, default_factors(), spec.sampler, train_rng).triples;
    ds.test = gen_synthetic(spec.n_test, default_factors(), spec.sampler, test_rng).triples;
    if (spec.flip_rho > 0.0) {
        RngStream flip_rng = root.derive("flip");
        ds.train = corrupt_flip(ds.train, spec.flip_rho, flip_rng);
    }
    return ds;
}

std::vector<TokenSeq> sft_corpus(const std::vector<PreferenceTriple>& triples) {
    std::vector<TokenSeq> corpus;
    corpus.reserve(2 * triples.size());
    for (const PreferenceTriple& tr : triples) {
        for (const TokenSeq* y : {&tr.chosen, &tr.rejected}) {
            TokenSeq seq;
            seq.ids = tr.prompt.ids;
            seq.ids.insert(seq.ids.end(), y->ids.begin(), y->ids.end());
            corpus.push_back(std::move(seq));
        }
    }
    return corpus;
}

void ExperimentConfig::validate() const {
    data.validate();
    model.validate();
    align.validate();
    if (codebook_scale <= 0.0)
        throw std::invalid_argument("ExperimentConfig: codebook_scale must be positive");
    if (sft.total_steps < 1) throw std::invalid_argument("ExperimentConfig: sft.total_steps");
    if (sft.batch_size < 1) throw std::invalid_argument("ExperimentConfig: sft.batch_size");
    const int longest = 2 + data.sampler.max_len +  // BOS + completion + EOS
                        1 + 24 + 3 * (data.sampler.hard_mode ? 3 : 1) + 1;  // prompt parts
    if (model.context_length < longest)
        throw std::invalid_argument(
            "ExperimentConfig: context_length " + std::to_string(model.context_length) +
            " cannot fit the longest prompt+completion (" + std::to_string(longest) + ")");
}

ExperimentConfig default_experiment_config() {
    ExperimentConfig cfg;
    cfg.model.d_model = 32;
    cfg.model.n_layers = 2;
    cfg.model.n_heads = 2;
    cfg.model.ffn_width = 128;
    cfg.model.context_length = 96;
    cfg.sft.total_steps = 400;
    cfg.sft.batch_size = 16;
    cfg.align.objective = ObjectiveId::kDpo;
    cfg.align.lpc = true;
    cfg.align.k = 8;
    cfg.align.batch_size = 32;
    cfg.align.total_steps = 0;  // one epoch over the train split
    return cfg;
}

std::string describe(const ExperimentConfig& cfg) {
    std::ostringstream os;
    os << describe_sft_slice(cfg) << "data.n_test=" << cfg.data.n_test << '\n'
       << "align.objective=" << objective_name(cfg.align.objective) << '\n'
       << "align.lpc=" << (cfg.align.lpc ? 1 : 0) << '\n'
       << "align.beta=" << fmt(cfg.align.beta) << '\n'
       << "align.lambda=" << fmt(cfg.align.lambda) << '\n'
       << "align.gamma=" << fmt(cfg.align.gamma) << '\n'
       << "align.tau=" << fmt(cfg.align.tau) << '\n'
       << "align.tau_g=" << fmt(cfg.align.tau_g) << '\n'
       << "align.k=" << cfg.align.k << '\n'
       << "align.peak_lr=" << fmt(cfg.align.peak_lr) << '\n'
       << "align.warmup_frac=" << fmt(cfg.align.warmup_frac) << '\n'
       << "align.total_steps=" << cfg.align.total_steps << '\n'
       << "align.batch_size=" << cfg.align.batch_size << '\n'
       << "align.mc_samples=" << cfg.align.mc_samples << '\n'
       << "align.freeze_codebook=" << (cfg.align.freeze_codebook ? 1 : 0) << '\n'
       << "align.codebook_init=" << init_name(cfg.align.codebook_init) << '\n'
       << "align.hard_gumbel=" << (cfg.align.hard_gumbel ? 1 : 0) << '\n'
       << "codebook_scale=" << fmt(cfg.codebook_scale) << '\n'
       << "eval_mode=" << latent_mode_name(cfg.eval_mode) << '\n';
    return os.str();
}

std::uint64_t experiment_hash(const ExperimentConfig& cfg) { return fnv1a64(describe(cfg)); }

RunOutcome run_experiment(const ExperimentConfig& cfg, RunArtifacts* artifacts,
                          const std::string& cache_dir) {
    cfg.validate();
    const std::string echo = describe(cfg);
    const bool caching = !cache_dir.empty();
    if (caching) fs::create_directories(cache_dir);

    RunOutcome out;
    if (caching && artifacts == nullptr &&
        try_load_outcome(outcome_path(cache_dir, cfg), echo, out))
        return out;

    SplitDataset ds = build_dataset(cfg.data);
    out.n_train = static_cast<long>(ds.train.size());
    out.n_test = static_cast<long>(ds.test.size());

    const RngStream root(cfg.seed);

    // reference model: fresh init, then SFT on both completions of every pair
    RngStream model_rng = root.derive("model");
    Transformer ref(cfg.model, model_rng);
    SftConfig sft = cfg.sft;
    sft.seed = cfg.seed;
    bool sft_restored = false;
    if (caching) {
        try {
            load_weights(sft_path(cache_dir, cfg), ref.params());
            sft_restored = true;
        } catch (const std::exception&) {
            sft_restored = false;  // miss or stale; retrain below
        }
    }
    if (!sft_restored) {
        const auto t0 = std::chrono::steady_clock::now();
        sft_train(ref, sft_corpus(ds.train), sft);
        out.sft_seconds = seconds_since(t0);
        if (caching) save_weights(sft_path(cache_dir, cfg), ref.params());
    }

    // policy starts from the reference weights; LPC adds a fresh latent coder
    RngStream coder_rng = root.derive("coder");
    RngStream policy_rng = root.derive("policy");
    PolicyModel policy =
        cfg.align.lpc
            ? PolicyModel(cfg.model, cfg.align.k, coder_rng, cfg.align.codebook_init)
            : PolicyModel(cfg.model, policy_rng);
    if (cfg.align.lpc && cfg.codebook_scale != 1.0)
        policy.coder->codebook.embeddings.value *= cfg.codebook_scale;
    policy.tf = ref;

    TrainConfig align = cfg.align;
    align.seed = cfg.seed;
    const auto t1 = std::chrono::steady_clock::now();
    std::vector<StepMetrics> metrics = align_train(policy, &ref, ds.train, align);
    out.align_seconds = seconds_since(t1);
    out.total_steps = static_cast<long>(metrics.size());
    if (!metrics.empty()) out.final_loss = metrics.back().loss;

    const LatentMode mode = cfg.align.lpc ? cfg.eval_mode : LatentMode::kNone;
    const AccuracyBreakdown acc =
        preference_accuracy_detailed(policy, ref, ds.test, cfg.align.beta, mode, cfg.seed);
    out.accuracy = acc.overall;
    out.per_source = acc.per_source;

    if (cfg.align.lpc) {
        const std::vector<int> assign = prior_assignments(policy, ds.test);
        std::vector<std::string> labels;
        labels.reserve(ds.test.size());
        for (const PreferenceTriple& tr : ds.test) labels.push_back(tr.source);
        out.purity = factor_purity(assign, labels);
        out.adjusted_rand = adjusted_rand_index(assign, labels);
    }

    if (caching) store_outcome(outcome_path(cache_dir, cfg), echo, out);
    if (artifacts != nullptr) {
        artifacts->policy = std::move(policy);
        artifacts->ref = std::move(ref);
        artifacts->metrics = std::move(metrics);
        artifacts->dataset = std::move(ds);
    }
    return out;
}

}  // namespace lpc
