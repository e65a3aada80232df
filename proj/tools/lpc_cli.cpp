// Command-line entry point: data generation, SFT, alignment, evaluation and
// the probing experiments (codebook sweep, label-flip robustness), plus latent
// projection export and cross-run comparison.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#include <algorithm>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "lpc/experiment.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;
using namespace lpc;

namespace {

constexpr const char* kVersionString = "lpc 0.1.0";

// ---- shared option blocks ----------------------------------------------------------

struct ModelOpts {
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 2;
    int ffn_width = 128;
    int context = 96;
};

void add_model_opts(CLI::App* cmd, ModelOpts& m) {
    cmd->add_option("--d-model", m.d_model, "model width")->capture_default_str();
    cmd->add_option("--layers", m.n_layers, "transformer layers")->capture_default_str();
    cmd->add_option("--heads", m.n_heads, "attention heads")->capture_default_str();
    cmd->add_option("--ffn", m.ffn_width, "feed-forward width")->capture_default_str();
    cmd->add_option("--context", m.context, "context length")->capture_default_str();
}

TransformerConfig model_config(const ModelOpts& m) {
    TransformerConfig tc;
    tc.d_model = m.d_model;
    tc.n_layers = m.n_layers;
    tc.n_heads = m.n_heads;
    tc.ffn_width = m.ffn_width;
    tc.context_length = m.context;
    tc.validate();
    return tc;
}

struct SamplerOpts {
    int min_len = 8;
    int max_len = 48;
    bool hard = false;
};

void add_sampler_opts(CLI::App* cmd, SamplerOpts& s) {
    cmd->add_option("--min-len", s.min_len, "shortest completion")->capture_default_str();
    cmd->add_option("--max-len", s.max_len, "longest completion")->capture_default_str();
    cmd->add_flag("--hard", s.hard, "two factors per prompt, 2:1 marker mix");
}

SamplerParams sampler_params(const SamplerOpts& s) {
    SamplerParams sp;
    sp.min_len = s.min_len;
    sp.max_len = s.max_len;
    sp.hard_mode = s.hard;
    return sp;
}

struct AlignOpts {
    std::string objective = "dpo";
    bool lpc = false;
    int k = 8;
    double beta = 0.1;
    double lambda = 0.05;
    double gamma = 0.0;
    double tau = 0.01;
    double tau_g = 1.0;
    int mc_samples = 1;
    bool hard_gumbel = false;
    bool freeze_codebook = false;
    std::string codebook_init = "gaussian";
    double codebook_scale = 1.0;
    long steps = 0;
    int batch = 32;
    double lr = 3e-4;
    double warmup = 0.10;
};

void add_align_opts(CLI::App* cmd, AlignOpts& a) {
    cmd->add_option("--objective", a.objective, "dpo | simpo | ipo")->capture_default_str();
    cmd->add_flag("--lpc", a.lpc, "latent preference coding variant");
    cmd->add_option("--k", a.k, "codebook size")->capture_default_str();
    cmd->add_option("--beta", a.beta, "DPO/SimPO scale")->capture_default_str();
    cmd->add_option("--lambda", a.lambda, "KL weight")->capture_default_str();
    cmd->add_option("--gamma", a.gamma, "SimPO margin")->capture_default_str();
    cmd->add_option("--tau", a.tau, "IPO regularizer")->capture_default_str();
    cmd->add_option("--tau-g", a.tau_g, "gumbel-softmax temperature")->capture_default_str();
    cmd->add_option("--mc-samples", a.mc_samples, "latent samples per triple")
        ->capture_default_str();
    cmd->add_flag("--hard-gumbel", a.hard_gumbel, "straight-through hard samples");
    cmd->add_flag("--freeze-codebook", a.freeze_codebook, "exclude codebook from updates");
    cmd->add_option("--codebook-init", a.codebook_init, "gaussian | zero")
        ->capture_default_str();
    cmd->add_option("--codebook-scale", a.codebook_scale,
                    "multiplier on the fresh codebook init")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--steps", a.steps, "alignment steps, 0 = one epoch")
        ->capture_default_str();
    cmd->add_option("--batch", a.batch, "batch size")->capture_default_str();
    cmd->add_option("--lr", a.lr, "peak learning rate")->capture_default_str();
    cmd->add_option("--warmup", a.warmup, "warmup fraction")->capture_default_str();
}

CodebookInit parse_codebook_init(const std::string& name) {
    if (name == "gaussian") return CodebookInit::kGaussian;
    if (name == "zero") return CodebookInit::kZero;
    throw std::invalid_argument("unknown codebook init '" + name +
                                "' (expected gaussian|zero)");
}

TrainConfig train_config(const AlignOpts& a, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.objective = parse_objective(a.objective);
    cfg.lpc = a.lpc;
    cfg.k = a.k;
    cfg.beta = a.beta;
    cfg.lambda = a.lambda;
    cfg.gamma = a.gamma;
    cfg.tau = a.tau;
    cfg.tau_g = a.tau_g;
    cfg.mc_samples = a.mc_samples;
    cfg.hard_gumbel = a.hard_gumbel;
    cfg.freeze_codebook = a.freeze_codebook;
    cfg.codebook_init = parse_codebook_init(a.codebook_init);
    cfg.total_steps = a.steps;
    cfg.batch_size = a.batch;
    cfg.peak_lr = a.lr;
    cfg.warmup_frac = a.warmup;
    cfg.seed = seed;
    cfg.validate();
    return cfg;
}

struct SftOpts {
    long steps = 400;
    int batch = 16;
    double lr = 1e-3;
    double warmup = 0.10;
};

void add_sft_opts(CLI::App* cmd, SftOpts& s, const std::string& prefix) {
    cmd->add_option("--" + prefix + "steps", s.steps, "SFT steps")->capture_default_str();
    cmd->add_option("--" + prefix + "batch", s.batch, "SFT batch size")
        ->capture_default_str();
    cmd->add_option("--" + prefix + "lr", s.lr, "SFT peak learning rate")
        ->capture_default_str();
    cmd->add_option("--" + prefix + "warmup", s.warmup, "SFT warmup fraction")
        ->capture_default_str();
}

SftConfig sft_config(const SftOpts& s, std::uint64_t seed) {
    SftConfig cfg;
    cfg.total_steps = s.steps;
    cfg.batch_size = s.batch;
    cfg.peak_lr = s.lr;
    cfg.warmup_frac = s.warmup;
    cfg.seed = seed;
    return cfg;
}

// ---- plumbing ----------------------------------------------------------------------

std::string make_run_dir(const std::string& out_root, const std::string& override_dir,
                         std::uint64_t seed) {
    if (!override_dir.empty()) {
        fs::create_directories(override_dir);
        return override_dir;
    }
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
    const fs::path base = fs::path(out_root) / (std::string(stamp) + "-seed" +
                                                std::to_string(seed));
    fs::path dir = base;
    for (int n = 2; fs::exists(dir); ++n) dir = base.string() + "-" + std::to_string(n);
    fs::create_directories(dir);
    return dir.string();
}

void echo_line(const std::string& key, const std::string& value) {
    std::cout << "  " << key << " = " << value << '\n';
}

template <typename T>
void echo_line(const std::string& key, T value) {
    std::ostringstream os;
    os << value;
    echo_line(key, os.str());
}

void echo_config(const std::string& header, const std::vector<std::pair<std::string,
                 std::string>>& kv) {
    std::cout << header << '\n';
    for (const auto& [k, v] : kv) echo_line(k, v);
}

std::string dbl(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

// sidecar consumed by `eval --config <run>/model.ini`; keys are eval's flags
void write_model_ini(const std::string& path, const ModelOpts& m, bool lpc, int k) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "d-model=" << m.d_model << '\n'
      << "layers=" << m.n_layers << '\n'
      << "heads=" << m.n_heads << '\n'
      << "ffn=" << m.ffn_width << '\n'
      << "context=" << m.context << '\n'
      << "lpc=" << (lpc ? "true" : "false") << '\n'
      << "k=" << k << '\n';
}

void write_loss_csv(const std::string& path, const std::vector<double>& losses) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << "step,loss\n";
    f.precision(17);
    for (std::size_t i = 0; i < losses.size(); ++i) f << i << ',' << losses[i] << '\n';
}

ordered_json report_to_json(const EvalReport& r) {
    ordered_json j;
    j["run_id"] = r.run_id;
    j["objective"] = r.objective;
    j["lpc"] = r.lpc;
    j["accuracy"] = r.accuracy;
    j["per_source"] = r.per_source;
    j["purity"] = r.purity;
    j["adjusted_rand"] = r.adjusted_rand;
    j["notes"] = r.notes;
    return j;
}

EvalReport report_from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open report " + path);
    try {
        const ordered_json j = ordered_json::parse(f);
        EvalReport r;
        r.run_id = j.at("run_id").get<std::string>();
        r.objective = j.at("objective").get<std::string>();
        r.lpc = j.at("lpc").get<bool>();
        r.accuracy = j.at("accuracy").get<double>();
        r.per_source = j.at("per_source").get<std::map<std::string, double>>();
        r.purity = j.at("purity").get<double>();
        r.adjusted_rand = j.at("adjusted_rand").get<double>();
        r.notes = j.at("notes").get<std::string>();
        return r;
    } catch (const ordered_json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- gen-data ----------------------------------------------------------------------

struct GenDataOpts {
    long n = 1000;
    long n_test = 0;
    std::uint64_t seed = 0;
    SamplerOpts sampler;
    double flip_rho = 0.0;
    std::string out;
    std::string test_out;
};

int cmd_gen_data(const GenDataOpts& o) {
    echo_config("gen-data", {{"n", std::to_string(o.n)},
                             {"n_test", std::to_string(o.n_test)},
                             {"seed", std::to_string(o.seed)},
                             {"min_len", std::to_string(o.sampler.min_len)},
                             {"max_len", std::to_string(o.sampler.max_len)},
                             {"hard", o.sampler.hard ? "1" : "0"},
                             {"flip_rho", dbl(o.flip_rho)},
                             {"out", o.out}});
    const SamplerParams sp = sampler_params(o.sampler);
    const RngStream root(o.seed);

    RngStream train_rng = root.derive("train");
    GenResult train = gen_synthetic(o.n, default_factors(), sp, train_rng);
    if (o.flip_rho > 0.0) {
        RngStream flip_rng = root.derive("flip");
        train.triples = corrupt_flip(train.triples, o.flip_rho, flip_rng);
    }
    write_jsonl(o.out, train.triples);
    std::cout << "wrote " << train.triples.size() << " triples to " << o.out
              << " (ties regenerated: " << train.ties_regenerated << ")\n";

    if (o.n_test > 0) {
        if (o.test_out.empty())
            throw std::invalid_argument("--n-test needs --test-out");
        RngStream test_rng = root.derive("test");
        const GenResult test = gen_synthetic(o.n_test, default_factors(), sp, test_rng);
        write_jsonl(o.test_out, test.triples);
        std::cout << "wrote " << test.triples.size() << " triples to " << o.test_out
                  << '\n';
    }
    return 0;
}

// ---- sft ---------------------------------------------------------------------------

struct SftCliOpts {
    std::string train_path;
    ModelOpts model;
    SftOpts sft;
    std::uint64_t seed = 1;
    std::string out_root = "runs";
    std::string run_dir;
};

int cmd_sft(const SftCliOpts& o) {
    const TransformerConfig tc = model_config(o.model);
    echo_config("sft", {{"train", o.train_path},
                        {"d_model", std::to_string(tc.d_model)},
                        {"layers", std::to_string(tc.n_layers)},
                        {"heads", std::to_string(tc.n_heads)},
                        {"ffn", std::to_string(tc.ffn_width)},
                        {"context", std::to_string(tc.context_length)},
                        {"steps", std::to_string(o.sft.steps)},
                        {"batch", std::to_string(o.sft.batch)},
                        {"lr", dbl(o.sft.lr)},
                        {"seed", std::to_string(o.seed)}});
    const std::vector<PreferenceTriple> triples = read_jsonl(o.train_path);
    const std::vector<TokenSeq> corpus = sft_corpus(triples);

    const RngStream root(o.seed);
    RngStream model_rng = root.derive("model");
    Transformer model(tc, model_rng);
    const SftResult res = sft_train(model, corpus, sft_config(o.sft, o.seed));

    const std::string dir = make_run_dir(o.out_root, o.run_dir, o.seed);
    const std::string weights = (fs::path(dir) / "sft_weights.bin").string();
    save_weights(weights, model.params());
    write_loss_csv((fs::path(dir) / "sft_loss.csv").string(), res.losses);
    write_model_ini((fs::path(dir) / "model.ini").string(), o.model, false, 0);
    std::cout << "final loss " << res.losses.back() << " nats/token\n"
              << "artifacts in " << dir << '\n';
    return 0;
}

// ---- align -------------------------------------------------------------------------

struct AlignCliOpts {
    std::string train_path;
    std::string ref_path;
    std::string init_path;
    std::string resume_path;
    ModelOpts model;
    AlignOpts align;
    std::uint64_t seed = 1;
    long checkpoint_every = 0;
    std::string out_root = "runs";
    std::string run_dir;
};

int cmd_align(const AlignCliOpts& o) {
    const TransformerConfig tc = model_config(o.model);
    const TrainConfig cfg = train_config(o.align, o.seed);
    const bool needs_ref = cfg.objective != ObjectiveId::kSimpo;
    if (needs_ref && o.ref_path.empty())
        throw std::invalid_argument(o.align.objective + " needs --ref (SFT weights)");

    echo_config("align", {{"train", o.train_path},
                          {"ref", o.ref_path.empty() ? "(none)" : o.ref_path},
                          {"objective", o.align.objective},
                          {"lpc", cfg.lpc ? "1" : "0"},
                          {"k", std::to_string(cfg.k)},
                          {"beta", dbl(cfg.beta)},
                          {"lambda", dbl(cfg.lambda)},
                          {"steps", std::to_string(cfg.total_steps)},
                          {"batch", std::to_string(cfg.batch_size)},
                          {"lr", dbl(cfg.peak_lr)},
                          {"seed", std::to_string(o.seed)}});
    const std::vector<PreferenceTriple> triples = read_jsonl(o.train_path);

    const RngStream root(o.seed);
    RngStream model_rng = root.derive("model");
    Transformer ref(tc, model_rng);
    if (!o.ref_path.empty()) load_weights(o.ref_path, ref.params());

    RngStream coder_rng = root.derive("coder");
    RngStream policy_rng = root.derive("policy");
    PolicyModel policy = cfg.lpc
                             ? PolicyModel(tc, cfg.k, coder_rng, cfg.codebook_init)
                             : PolicyModel(tc, policy_rng);
    if (cfg.lpc && o.align.codebook_scale != 1.0)
        policy.coder->codebook.embeddings.value *= o.align.codebook_scale;
    const std::string init_src = !o.init_path.empty() ? o.init_path : o.ref_path;
    if (!init_src.empty()) load_weights(init_src, policy.tf.params());
    else std::cout << "  note: no --ref/--init weights, policy starts from random init\n";

    const std::string dir = make_run_dir(o.out_root, o.run_dir, o.seed);
    const std::string ckpt = (fs::path(dir) / "checkpoint.bin").string();
    Transformer* ref_ptr = o.ref_path.empty() ? nullptr : &ref;
    const std::vector<StepMetrics> metrics =
        o.resume_path.empty()
            ? align_train(policy, ref_ptr, triples, cfg, ckpt, o.checkpoint_every)
            : align_resume(o.resume_path, policy, ref_ptr, triples);

    save_weights((fs::path(dir) / "policy_weights.bin").string(), policy.params());
    write_metrics_csv((fs::path(dir) / "metrics.csv").string(), metrics);
    write_model_ini((fs::path(dir) / "model.ini").string(), o.model, cfg.lpc, cfg.k);
    if (!metrics.empty())
        std::cout << "final loss " << metrics.back().loss << " over "
                  << metrics.size() << " steps\n";
    std::cout << "artifacts in " << dir << '\n';
    return 0;
}

// ---- eval --------------------------------------------------------------------------

struct EvalCliOpts {
    std::string policy_path;
    std::string ref_path;
    std::string data_path;
    ModelOpts model;
    bool lpc = false;
    int k = 8;
    double beta = 0.1;
    std::string latent_mode = "expected";
    std::string objective = "dpo";
    std::string run_id = "eval";
    std::uint64_t seed = 1;
    std::string report_out;
};

int cmd_eval(const EvalCliOpts& o) {
    const TransformerConfig tc = model_config(o.model);
    echo_config("eval", {{"policy", o.policy_path},
                         {"ref", o.ref_path},
                         {"data", o.data_path},
                         {"lpc", o.lpc ? "1" : "0"},
                         {"k", std::to_string(o.k)},
                         {"beta", dbl(o.beta)},
                         {"latent_mode", o.latent_mode},
                         {"seed", std::to_string(o.seed)}});
    const std::vector<PreferenceTriple> ds = read_jsonl(o.data_path);

    const RngStream root(o.seed);
    RngStream coder_rng = root.derive("coder");
    RngStream policy_rng = root.derive("policy");
    PolicyModel policy = o.lpc ? PolicyModel(tc, o.k, coder_rng)
                               : PolicyModel(tc, policy_rng);
    load_weights(o.policy_path, policy.params());
    RngStream ref_rng = root.derive("model");
    Transformer ref(tc, ref_rng);
    load_weights(o.ref_path, ref.params());

    const LatentMode mode = o.lpc ? parse_latent_mode(o.latent_mode) : LatentMode::kNone;
    EvalReport report;
    report.run_id = o.run_id;
    report.objective = o.objective;
    report.lpc = o.lpc;

    if (mode == LatentMode::kSampled) {
        // deterministic evaluation of a stochastic mode: 10 prior draws
        std::vector<double> accs;
        AccuracyBreakdown first;
        for (int d = 0; d < 10; ++d) {
            const AccuracyBreakdown b =
                preference_accuracy_detailed(policy, ref, ds, o.beta, mode, o.seed + d);
            if (d == 0) first = b;
            accs.push_back(b.overall);
        }
        const double mean =
            std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
        double var = 0.0;
        for (double a : accs) var += (a - mean) * (a - mean);
        const double sd = std::sqrt(var / static_cast<double>(accs.size()));
        report.accuracy = mean;
        report.per_source = first.per_source;
        report.notes = "sampled mode: mean over 10 draws, std " + dbl(sd);
        std::cout << "accuracy " << mean << " +- " << sd << " (10 prior draws)\n";
    } else {
        const AccuracyBreakdown b =
            preference_accuracy_detailed(policy, ref, ds, o.beta, mode, o.seed);
        report.accuracy = b.overall;
        report.per_source = b.per_source;
        std::cout << "accuracy " << b.overall << " on " << b.n << " triples\n";
        for (const auto& [src, a] : b.per_source)
            std::cout << "  " << src << " " << a << '\n';
    }

    if (o.lpc) {
        const std::vector<int> assign = prior_assignments(policy, ds);
        std::vector<std::string> labels;
        labels.reserve(ds.size());
        for (const PreferenceTriple& tr : ds) labels.push_back(tr.source);
        report.purity = factor_purity(assign, labels);
        report.adjusted_rand = adjusted_rand_index(assign, labels);
        std::cout << "purity " << report.purity << ", adjusted rand "
                  << report.adjusted_rand << '\n';
    }

    if (!o.report_out.empty()) {
        std::ofstream f(o.report_out, std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open " + o.report_out);
        f << report_to_json(report).dump(2) << '\n';
        std::cout << "report written to " << o.report_out << '\n';
    }
    return 0;
}

// ---- sweep-k -----------------------------------------------------------------------

struct ExperimentCliOpts {
    long n_train = 8000;
    long n_test = 1000;
    std::uint64_t data_seed = 0;
    SamplerOpts sampler;
    ModelOpts model;
    SftOpts sft;
    AlignOpts align;
    std::vector<std::uint64_t> seeds = {1};
    std::string cache_dir = "runs/cache";
};

void add_experiment_opts(CLI::App* cmd, ExperimentCliOpts& e) {
    cmd->add_option("--n-train", e.n_train, "training triples")->capture_default_str();
    cmd->add_option("--n-test", e.n_test, "held-out triples")->capture_default_str();
    cmd->add_option("--data-seed", e.data_seed, "dataset seed")->capture_default_str();
    add_sampler_opts(cmd, e.sampler);
    add_model_opts(cmd, e.model);
    add_sft_opts(cmd, e.sft, "sft-");
    add_align_opts(cmd, e.align);
    cmd->add_option("--seeds", e.seeds, "run seeds (median over them)")
        ->delimiter(',')
        ->capture_default_str();
    cmd->add_option("--cache-dir", e.cache_dir, "run cache, empty disables")
        ->capture_default_str();
}

ExperimentConfig experiment_config(const ExperimentCliOpts& e, std::uint64_t seed) {
    ExperimentConfig cfg;
    cfg.data.n_train = e.n_train;
    cfg.data.n_test = e.n_test;
    cfg.data.seed = e.data_seed;
    cfg.data.sampler = sampler_params(e.sampler);
    cfg.model = model_config(e.model);
    cfg.sft = sft_config(e.sft, seed);
    cfg.align = train_config(e.align, seed);
    cfg.seed = seed;
    cfg.codebook_scale = e.align.codebook_scale;
    return cfg;
}

struct SweepKOpts {
    ExperimentCliOpts exp;
    std::vector<int> grid = {1, 2, 4, 8, 16};
    std::string out = "sweep_k.csv";
};

int cmd_sweep_k(const SweepKOpts& o) {
    std::vector<int> grid = o.grid;
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.empty() || grid.front() < 1)
        throw std::invalid_argument("--grid needs positive codebook sizes");

    ExperimentCliOpts exp = o.exp;
    exp.align.lpc = true;
    {
        ExperimentConfig echo_cfg = experiment_config(exp, exp.seeds.front());
        std::cout << "sweep-k over K = {";
        for (std::size_t i = 0; i < grid.size(); ++i)
            std::cout << (i ? "," : "") << grid[i];
        std::cout << "}, seeds = {";
        for (std::size_t i = 0; i < exp.seeds.size(); ++i)
            std::cout << (i ? "," : "") << exp.seeds[i];
        std::cout << "}\n" << describe(echo_cfg);
    }

    std::ofstream f(o.out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + o.out);
    f << "k,seed,accuracy,purity,adjusted_rand,final_loss\n";
    f.precision(17);
    for (int k : grid) {
        std::vector<double> accs;
        for (std::uint64_t seed : exp.seeds) {
            ExperimentConfig cfg = experiment_config(exp, seed);
            cfg.align.k = k;
            const RunOutcome out = run_experiment(cfg, nullptr, exp.cache_dir);
            f << k << ',' << seed << ',' << out.accuracy << ',' << out.purity << ','
              << out.adjusted_rand << ',' << out.final_loss << '\n';
            f.flush();
            accs.push_back(out.accuracy);
            std::cout << "k=" << k << " seed=" << seed << " accuracy=" << out.accuracy
                      << " purity=" << out.purity << (out.from_cache ? " (cached)" : "")
                      << '\n';
        }
        std::cout << "k=" << k << " median accuracy " << median(accs) << '\n';
    }
    std::cout << "csv written to " << o.out << '\n';
    return 0;
}

// ---- flip-exp ----------------------------------------------------------------------

struct FlipExpOpts {
    ExperimentCliOpts exp;
    double rho = 0.5;
    std::string out = "flip_exp.csv";
};

int cmd_flip_exp(const FlipExpOpts& o) {
    if (o.rho <= 0.0 || o.rho > 1.0)
        throw std::invalid_argument("--rho must lie in (0, 1]");
    {
        ExperimentConfig echo_cfg = experiment_config(o.exp, o.exp.seeds.front());
        std::cout << "flip-exp rho=" << o.rho << ", seeds = {";
        for (std::size_t i = 0; i < o.exp.seeds.size(); ++i)
            std::cout << (i ? "," : "") << o.exp.seeds[i];
        std::cout << "}\n" << describe(echo_cfg);
    }

    std::ofstream f(o.out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + o.out);
    f << "seed,clean_vanilla,clean_lpc,flip_vanilla,flip_lpc,clean_margin,flip_margin\n";
    f.precision(17);

    std::vector<double> clean_margins, flip_margins;
    for (std::uint64_t seed : o.exp.seeds) {
        double acc[2][2];  // [flipped][lpc]
        for (int flipped = 0; flipped < 2; ++flipped) {
            for (int lpc = 0; lpc < 2; ++lpc) {
                ExperimentConfig cfg = experiment_config(o.exp, seed);
                cfg.data.flip_rho = flipped ? o.rho : 0.0;
                cfg.align.lpc = lpc == 1;
                const RunOutcome out = run_experiment(cfg, nullptr, o.exp.cache_dir);
                acc[flipped][lpc] = out.accuracy;
                std::cout << (flipped ? "flipped" : "clean  ") << ' '
                          << (lpc ? "lpc    " : "vanilla") << " seed=" << seed
                          << " accuracy=" << out.accuracy
                          << (out.from_cache ? " (cached)" : "") << '\n';
            }
        }
        const double cm = acc[0][1] - acc[0][0];
        const double fm = acc[1][1] - acc[1][0];
        clean_margins.push_back(cm);
        flip_margins.push_back(fm);
        f << seed << ',' << acc[0][0] << ',' << acc[0][1] << ',' << acc[1][0] << ','
          << acc[1][1] << ',' << cm << ',' << fm << '\n';
        f.flush();
        std::cout << "seed " << seed << ": clean margin " << cm << ", flipped margin "
                  << fm << '\n';
    }
    std::cout << "median clean margin " << median(clean_margins)
              << ", median flipped margin " << median(flip_margins) << '\n'
              << "csv written to " << o.out << '\n';
    return 0;
}

// ---- project -----------------------------------------------------------------------

struct ProjectOpts {
    std::string policy_path;
    std::string data_path;
    ModelOpts model;
    int k = 8;
    std::uint64_t seed = 1;
    std::string out = "projection.csv";
};

int cmd_project(const ProjectOpts& o) {
    const TransformerConfig tc = model_config(o.model);
    echo_config("project", {{"policy", o.policy_path},
                            {"data", o.data_path},
                            {"k", std::to_string(o.k)},
                            {"out", o.out}});
    const std::vector<PreferenceTriple> ds = read_jsonl(o.data_path);

    const RngStream root(o.seed);
    RngStream coder_rng = root.derive("coder");
    PolicyModel policy(tc, o.k, coder_rng);
    load_weights(o.policy_path, policy.params());

    const std::vector<Vector> probs = prior_probability_vectors(policy, ds);
    std::vector<std::string> labels;
    labels.reserve(ds.size());
    for (const PreferenceTriple& tr : ds) labels.push_back(tr.source);
    const Projection p = project_latents(probs, labels);
    write_projection_csv(o.out, p);
    std::cout << "projected " << probs.size() << " prior vectors to " << o.out << '\n';
    if (p.zero_variance) std::cout << "warning: zero-variance input, coordinates are 0\n";
    return 0;
}

// ---- compare -----------------------------------------------------------------------

struct CompareOpts {
    std::vector<std::string> reports;
    std::string out;
};

int cmd_compare(const CompareOpts& o) {
    std::vector<EvalReport> runs;
    runs.reserve(o.reports.size());
    for (const std::string& path : o.reports) runs.push_back(report_from_file(path));
    std::cout << compare_report(runs);
    if (!o.out.empty()) {
        write_compare_csv(o.out, runs);
        std::cout << "csv written to " << o.out << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent preference coding: synthetic alignment toolkit"};
    app.set_version_flag("--version", kVersionString);
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker threads (this build runs 1)")
        ->capture_default_str();

    GenDataOpts gen;
    CLI::App* cgen = app.add_subcommand("gen-data", "generate a synthetic preference set");
    cgen->add_option("--n", gen.n, "training triples")->capture_default_str();
    cgen->add_option("--n-test", gen.n_test, "held-out triples (0 = skip)")
        ->capture_default_str();
    cgen->add_option("--seed", gen.seed, "dataset seed")->capture_default_str();
    add_sampler_opts(cgen, gen.sampler);
    cgen->add_option("--flip-rho", gen.flip_rho, "label corruption rate on the train set")
        ->capture_default_str();
    cgen->add_option("--out", gen.out, "train JSONL path")->required();
    cgen->add_option("--test-out", gen.test_out, "held-out JSONL path");
    cgen->set_config("--config");
    cgen->callback([&gen] { cmd_gen_data(gen); });

    SftCliOpts sft;
    CLI::App* csft = app.add_subcommand("sft", "train the reference model");
    csft->add_option("--train", sft.train_path, "training JSONL")->required();
    add_model_opts(csft, sft.model);
    add_sft_opts(csft, sft.sft, "");
    csft->add_option("--seed", sft.seed, "run seed")->capture_default_str();
    csft->add_option("--out-root", sft.out_root, "runs directory")->capture_default_str();
    csft->add_option("--run-dir", sft.run_dir, "exact artifact directory (overrides)");
    csft->set_config("--config");
    csft->callback([&sft] { cmd_sft(sft); });

    AlignCliOpts align;
    CLI::App* calign = app.add_subcommand("align", "preference-align a policy");
    calign->add_option("--train", align.train_path, "training JSONL")->required();
    calign->add_option("--ref", align.ref_path, "reference weights (SFT output)");
    calign->add_option("--init", align.init_path, "policy init weights (default: --ref)");
    calign->add_option("--resume", align.resume_path, "checkpoint to resume");
    add_model_opts(calign, align.model);
    add_align_opts(calign, align.align);
    calign->add_option("--seed", align.seed, "run seed")->capture_default_str();
    calign->add_option("--checkpoint-every", align.checkpoint_every,
                       "checkpoint period in steps (0 = final only)")
        ->capture_default_str();
    calign->add_option("--out-root", align.out_root, "runs directory")
        ->capture_default_str();
    calign->add_option("--run-dir", align.run_dir, "exact artifact directory (overrides)");
    calign->set_config("--config");
    calign->callback([&align] { cmd_align(align); });

    EvalCliOpts ev;
    CLI::App* ceval = app.add_subcommand("eval", "held-out preference accuracy");
    ceval->add_option("--policy", ev.policy_path, "policy weights")->required();
    ceval->add_option("--ref", ev.ref_path, "reference weights")->required();
    ceval->add_option("--data", ev.data_path, "evaluation JSONL")->required();
    add_model_opts(ceval, ev.model);
    ceval->add_flag("--lpc", ev.lpc, "policy carries a latent coder");
    ceval->add_option("--k", ev.k, "codebook size")->capture_default_str();
    ceval->add_option("--beta", ev.beta, "implicit reward scale")->capture_default_str();
    ceval->add_option("--latent-mode", ev.latent_mode, "expected | sampled | mode | none")
        ->capture_default_str();
    ceval->add_option("--objective", ev.objective, "objective label for the report")
        ->capture_default_str();
    ceval->add_option("--run-id", ev.run_id, "report row id")->capture_default_str();
    ceval->add_option("--seed", ev.seed, "sampled-mode draw seed")->capture_default_str();
    ceval->add_option("--report", ev.report_out, "EvalReport JSON path");
    ceval->set_config("--config");
    ceval->callback([&ev] { cmd_eval(ev); });

    SweepKOpts sweep;
    CLI::App* csweep = app.add_subcommand("sweep-k", "accuracy across codebook sizes");
    csweep->add_option("--grid", sweep.grid, "codebook sizes")
        ->delimiter(',')
        ->capture_default_str();
    add_experiment_opts(csweep, sweep.exp);
    csweep->add_option("--out", sweep.out, "CSV path")->capture_default_str();
    csweep->set_config("--config");
    csweep->callback([&sweep] { cmd_sweep_k(sweep); });

    FlipExpOpts flip;
    CLI::App* cflip = app.add_subcommand("flip-exp", "label-flip robustness experiment");
    cflip->add_option("--rho", flip.rho, "flip rate")->capture_default_str();
    add_experiment_opts(cflip, flip.exp);
    cflip->add_option("--out", flip.out, "CSV path")->capture_default_str();
    cflip->set_config("--config");
    cflip->callback([&flip] { cmd_flip_exp(flip); });

    ProjectOpts proj;
    CLI::App* cproj = app.add_subcommand("project", "export 2D PCA of prior vectors");
    cproj->add_option("--policy", proj.policy_path, "LPC policy weights")->required();
    cproj->add_option("--data", proj.data_path, "JSONL with prompts")->required();
    add_model_opts(cproj, proj.model);
    cproj->add_option("--k", proj.k, "codebook size")->capture_default_str();
    cproj->add_option("--seed", proj.seed, "architecture seed")->capture_default_str();
    cproj->add_option("--out", proj.out, "CSV path")->capture_default_str();
    cproj->set_config("--config");
    cproj->callback([&proj] { cmd_project(proj); });

    CompareOpts cmp;
    CLI::App* ccmp = app.add_subcommand("compare", "tabulate EvalReport JSONs");
    ccmp->add_option("--reports", cmp.reports, "report JSON paths")->required();
    ccmp->add_option("--out", cmp.out, "CSV path");
    ccmp->set_config("--config");
    ccmp->callback([&cmp] { cmd_compare(cmp); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    if (threads != 1)
        std::cerr << "note: this build runs single-threaded; --threads ignored\n";
    return 0;
}
