#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lsk/lsk.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

/// Domain failure with a message for stderr; maps to exit code 1.
struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Format { text, kv };

struct ModelFlags {
    std::string variant = "T";
    std::vector<double> ffn_ratios;
    std::string mode = "spatial";
    std::string pool = "avg,max";
    std::string plan;

    void add(CLI::App* cmd, bool with_plan = true) {
        cmd->add_option("--variant", variant, "Backbone preset")->check(CLI::IsMember({"T", "S"}))->capture_default_str();
        cmd->add_option("--ffn-ratios", ffn_ratios, "Four per-stage FFN expansion ratios")
            ->delimiter(',')
            ->expected(4);
        cmd->add_option("--mode", mode, "Selection mode")
            ->check(CLI::IsMember({"spatial", "channel", "none"}))
            ->capture_default_str();
        cmd->add_option("--pool", pool, "Pooling descriptors for spatial selection")
            ->check(CLI::IsMember({"avg", "max", "avg,max"}))
            ->capture_default_str();
        if (with_plan) cmd->add_option("--plan", plan, "Decomposition plan such as (5,1)->(7,3)");
    }

    lsk::BackboneConfig config() const {
        auto cfg = lsk::backbone_preset(variant);
        if (!ffn_ratios.empty()) std::copy(ffn_ratios.begin(), ffn_ratios.end(), cfg.ffn_ratios.begin());
        cfg.mode = lsk::parse_selection_mode(mode);
        cfg.pooling = lsk::parse_pooling(pool);
        if (!plan.empty()) cfg.plan = lsk::parse_plan(plan);
        cfg.validate();
        return cfg;
    }
};

std::string rf_trace(const lsk::DecompositionPlan& p) {
    std::string s;
    for (std::size_t i = 0; i < p.rf_per_stage.size(); ++i) s += (i ? "->" : "") + std::to_string(p.rf_per_stage[i]);
    return s;
}

// ---- plan ---------------------------------------------------------------

struct PlanArgs {
    std::size_t target_rf = 0, max_stages = 0, max_k = 0, top = 0;
    std::size_t channels = 64, branch_channels = 32, h = 128, w = 128;
    Format format = Format::text;
};

int run_plan(const PlanArgs& a) {
    lsk::PlanSearchOptions opt;
    opt.channels = a.channels;
    opt.branch_channels = a.branch_channels;
    auto plans = lsk::enumerate_plans(a.target_rf, a.max_stages, a.max_k, opt);
    if (plans.empty())
        throw Failure("no valid plan reaches RF " + std::to_string(a.target_rf) + " with at most " +
                      std::to_string(a.max_stages) + " stages and k <= " + std::to_string(a.max_k));
    if (a.top && plans.size() > a.top) plans.resize(a.top);
    if (a.format == Format::text)
        std::cout << std::left << std::setw(6) << "rank" << std::setw(28) << "plan" << std::setw(18) << "rf"
                  << std::right << std::setw(12) << "params" << std::setw(16) << "macs" << std::setw(16) << "flops"
                  << '\n';
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const auto r = lsk::cost_plan(plans[i], a.channels, a.branch_channels, a.h, a.w, opt.cost);
        if (a.format == Format::kv) {
            std::cout << "rank=" << i + 1 << " plan=" << plans[i].str() << " rf=" << rf_trace(plans[i])
                      << " params=" << r.params << " macs=" << r.macs << " flops=" << r.flops << '\n';
        } else {
            std::cout << std::left << std::setw(6) << i + 1 << std::setw(28) << plans[i].str() << std::setw(18)
                      << rf_trace(plans[i]) << std::right << std::setw(12) << r.params << std::setw(16) << r.macs
                      << std::setw(16) << r.flops << '\n';
        }
    }
    if (a.format == Format::text)
        std::cout << "costs: c=" << a.channels << " c_mid=" << a.branch_channels << " at " << a.h << "x" << a.w
                  << ", biases included\n";
    return kExitOk;
}

// ---- validate -----------------------------------------------------------

struct ValidateArgs {
    std::string plan, weights;
    ModelFlags model;
};

int run_validate(const ValidateArgs& a) {
    if (a.plan.empty() && a.weights.empty()) throw CLI::ValidationError("validate", "give --plan or --weights");
    if (!a.plan.empty()) {
        try {
            const auto p = lsk::parse_plan(a.plan);
            std::cout << "plan " << p.str() << " valid, rf " << rf_trace(p) << '\n';
        } catch (const lsk::PlanError& e) {
            throw Failure("invalid plan " + a.plan + ": " + e.what());
        } catch (const std::invalid_argument& e) {
            throw Failure(e.what());
        }
    }
    if (!a.weights.empty()) {
        const auto cfg = a.model.config();
        const auto params = lsk::backbone_from_weights(lsk::read_weights_file(a.weights), cfg);
        std::cout << "weights " << a.weights << " match " << cfg.name << ": " << lsk::count_parameters(params)
                  << " parameters\n";
    }
    return kExitOk;
}

// ---- count --------------------------------------------------------------

struct CountArgs {
    ModelFlags model;
    std::size_t h = 1024, w = 1024;
    int depth = 2;
    Format format = Format::text;
};

int run_count(const CountArgs& a) {
    const auto cfg = a.model.config();
    const auto r = lsk::cost_backbone(cfg, a.h, a.w);
    if (a.format == Format::kv) lsk::write_cost_kv(std::cout, r);
    else lsk::write_cost_text(std::cout, r, a.depth);
    return kExitOk;
}

// ---- forward ------------------------------------------------------------

struct ForwardArgs {
    ModelFlags model;
    std::string weights = "random", input, out;
    std::uint64_t seed = 0;
    std::size_t h = 64, w = 64;
};

int run_forward(const ForwardArgs& a) {
    const auto cfg = a.model.config();
    std::mt19937_64 rng(a.seed);
    const auto params = a.weights == "random" ? lsk::init_backbone<float>(cfg, rng)
                                              : lsk::backbone_from_weights(lsk::read_weights_file(a.weights), cfg);
    const auto x = a.input == "random" ? lsk::random_tensor<float>({1, cfg.in_channels, a.h, a.w}, rng, 0.0, 1.0)
                                       : lsk::read_input_file(a.input);
    if (x.c() != cfg.in_channels)
        throw Failure("input has " + std::to_string(x.c()) + " channels, " + cfg.name + " expects " +
                      std::to_string(cfg.in_channels));
    if (x.h() % 32 || x.w() % 32)
        throw Failure("input size " + std::to_string(x.h()) + "x" + std::to_string(x.w()) +
                      " is not divisible by 32");
    const auto out = lsk::backbone_forward(x, params);
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw Failure("cannot create " + a.out + ": " + ec.message());
    for (std::size_t s = 0; s < 4; ++s) {
        const auto path = fs::path(a.out) / ("stage" + std::to_string(s + 1) + ".lskt");
        lsk::write_tensor_file(path, out.features[s]);
        std::cout << "feature stage" << s + 1 << " " << out.features[s].shape().str() << " -> " << path.string()
                  << '\n';
    }
    lsk::write_mask_record(a.out, out.masks);
    std::cout << "masks " << out.masks.size() << " blocks -> " << a.out << '\n';
    return kExitOk;
}

// ---- gradcheck ----------------------------------------------------------

struct GradcheckArgs {
    std::string op;
    bool all = false;
    std::uint64_t seed = 0;
    std::string perturb;
};

int run_gradcheck(const GradcheckArgs& a) {
    std::vector<const lsk::GradCheckOp*> ops;
    if (!a.op.empty()) {
        const auto* op = lsk::find_gradcheck_op(a.op);
        if (!op) {
            std::string names;
            for (const auto& o : lsk::gradcheck_registry()) names += " " + o.name;
            throw CLI::ValidationError("--op", "unknown op '" + a.op + "'; known:" + names);
        }
        ops.push_back(op);
    } else {
        for (const auto& o : lsk::gradcheck_registry()) ops.push_back(&o);
    }
    bool ok = true;
    for (const auto* op : ops) {
        lsk::GradCheckOptions opt;
        opt.seed = a.seed;
        opt.perturb_backward = a.perturb == op->name || a.perturb == "all";
        const auto r = op->run(opt);
        const bool pass = r.max_rel_error < lsk::kGradCheckTolerance;
        std::cout << std::left << std::setw(18) << r.op << " max_rel_error " << std::scientific << std::setprecision(3)
                  << r.max_rel_error << std::defaultfloat << "  checked " << r.checked << "  "
                  << (pass ? "ok" : "FAIL") << '\n';
        if (!pass) {
            std::cerr << "gradcheck failed: " << r.op << " worst at " << r.worst_slot << "[" << r.worst_index
                      << "], relative error " << r.max_rel_error << '\n';
            ok = false;
        }
    }
    return ok ? kExitOk : kExitDomain;
}

// ---- train-toy ----------------------------------------------------------

struct TrainArgs {
    lsk::ToyTrainConfig cfg;
    std::string scope = "module";
    std::size_t every = 50;
};

int run_train(TrainArgs a) {
    a.cfg.scope = lsk::parse_toy_scope(a.scope);
    lsk::ToyTrainResult<float> r;
    try {
        r = lsk::toy_train<float>(a.cfg);
    } catch (const lsk::TrainingDiverged& e) {
        throw Failure(e.what());
    }
    std::cout << std::setprecision(6);
    for (std::size_t s = 0; s < r.losses.size(); ++s)
        if (a.every == 0 || s % a.every == 0 || s + 1 == r.losses.size())
            std::cout << "step " << s << " loss " << r.losses[s] << '\n';
    const bool pass = r.final_loss() < 1e-2;
    std::cout << "final loss " << r.final_loss() << (pass ? " < " : " >= ") << "1e-2\n";
    if (!pass) std::cerr << "train-toy: final loss " << r.final_loss() << " did not reach 1e-2\n";
    return pass ? kExitOk : kExitDomain;
}

// ---- analyze ------------------------------------------------------------

struct AnalyzeArgs {
    std::string masks, annotations, out;
};

int run_analyze(const AnalyzeArgs& a) {
    const auto in = lsk::load_analysis_inputs(a.masks, a.annotations);
    for (const auto& w : in.warnings) std::cerr << "warning: " << w << '\n';
    const auto rc = lsk::compute_all_rc(in.images);
    for (const auto& n : rc.notices) std::cerr << "notice: " << n << '\n';
    std::error_code ec;
    fs::create_directories(a.out, ec);
    if (ec) throw Failure("cannot create " + a.out + ": " + ec.message());
    const auto rc_path = fs::path(a.out) / "rc.csv";
    {
        std::ofstream f(rc_path);
        if (!f) throw Failure("cannot write " + rc_path.string());
        lsk::write_rc_csv(f, rc.stats);
    }
    std::vector<lsk::BlockSelectionDiff> diffs;
    std::vector<std::pair<double, std::string>> ranking;
    try {
        for (const auto& s : rc.stats) {
            auto d = lsk::compute_selection_diff(in.images, s.category);
            ranking.emplace_back(lsk::mean_selection_diff(d), s.category);
            diffs.insert(diffs.end(), d.begin(), d.end());
        }
    } catch (const lsk::UnsupportedPlan& e) {
        throw Failure(std::string(e.what()) + " (wrote " + rc_path.string() + " only)");
    }
    const auto diff_path = fs::path(a.out) / "selection_diff.csv";
    {
        std::ofstream f(diff_path);
        if (!f) throw Failure("cannot write " + diff_path.string());
        lsk::write_diff_csv(f, diffs);
    }
    std::sort(ranking.begin(), ranking.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    std::cout << "images " << in.images.size() << ", categories " << rc.stats.size() << '\n';
    for (const auto& s : rc.stats)
        std::cout << "r_c " << s.category << " raw " << s.r_c_raw << " norm " << s.r_c_norm << " images " << s.images
                  << '\n';
    for (std::size_t i = 0; i < ranking.size(); ++i)
        std::cout << "delta_rank " << i + 1 << " " << ranking[i].second << " mean_delta " << ranking[i].first << '\n';
    std::cout << "wrote " << rc_path.string() << " and " << diff_path.string() << '\n';
    return kExitOk;
}

void add_format(CLI::App* cmd, Format& f) {
    cmd->add_option("--format", f, "Output format")
        ->transform(CLI::CheckedTransformer(std::map<std::string, Format>{{"text", Format::text}, {"kv", Format::kv}}))
        ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    if (std::getenv("LSK_THREADS")) lsk::configure_threads_from_env();
    else lsk::set_max_threads(0);

    CLI::App app{"Large selective kernel toolkit: plans, costs, forward passes, gradient checks, analysis"};
    app.set_help_flag("--help", "Print this help message and exit");
    app.require_subcommand(1);
    app.set_version_flag("--version", "lsk 1.0");

    PlanArgs plan;
    auto* c_plan = app.add_subcommand("plan", "Enumerate decomposition plans for a target receptive field");
    c_plan->add_option("--target-rf", plan.target_rf, "Target receptive field")->required();
    c_plan->add_option("--max-stages", plan.max_stages, "Maximum number of depth-wise stages")->required();
    c_plan->add_option("--max-k", plan.max_k, "Largest kernel size")->required();
    c_plan->add_option("--top", plan.top, "Show only the cheapest T plans (0 = all)");
    c_plan->add_option("--channels", plan.channels, "Module channels c")->capture_default_str();
    c_plan->add_option("--branch-channels", plan.branch_channels, "Branch channels c_mid")->capture_default_str();
    c_plan->add_option("--h", plan.h, "Feature height for MAC/FLOP columns")->capture_default_str();
    c_plan->add_option("--w", plan.w, "Feature width for MAC/FLOP columns")->capture_default_str();
    add_format(c_plan, plan.format);

    ValidateArgs validate;
    auto* c_validate = app.add_subcommand("validate", "Check a decomposition plan or a weight file");
    c_validate->add_option("--plan", validate.plan, "Plan such as (5,1)->(7,3)");
    c_validate->add_option("--weights", validate.weights, "LSKW file to check against --variant");
    validate.model.add(c_validate, false);

    CountArgs count;
    auto* c_count = app.add_subcommand("count", "Parameter, MAC and FLOP report for a backbone");
    count.model.add(c_count);
    c_count->add_option("--h", count.h, "Input height")->capture_default_str();
    c_count->add_option("--w", count.w, "Input width")->capture_default_str();
    c_count->add_option("--depth", count.depth, "Text breakdown depth")->capture_default_str();
    add_format(c_count, count.format);

    ForwardArgs fwd;
    auto* c_fwd = app.add_subcommand("forward", "Run the backbone and export features and selection masks");
    fwd.model.add(c_fwd);
    c_fwd->add_option("--weights", fwd.weights, "LSKW file or 'random'")->capture_default_str();
    c_fwd->add_option("--seed", fwd.seed, "Seed for random weights and inputs")->capture_default_str();
    c_fwd->add_option("--input", fwd.input, "LSKT tensor, P5/P6 image, or 'random'")->required();
    c_fwd->add_option("--h", fwd.h, "Height of a random input")->capture_default_str();
    c_fwd->add_option("--w", fwd.w, "Width of a random input")->capture_default_str();
    c_fwd->add_option("--export-masks", fwd.out, "Output directory for features, masks and manifest")->required();

    GradcheckArgs gc;
    auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference checks of every backward pass");
    auto* op_opt = c_gc->add_option("--op", gc.op, "Check a single op");
    c_gc->add_flag("--all", gc.all, "Check every op (default)")->excludes(op_opt);
    c_gc->add_option("--seed", gc.seed, "Seed for the random instances")->capture_default_str();
    c_gc->add_option("--perturb-backward", gc.perturb, "Corrupt the analytic gradient of OP (or 'all')")
        ->group("Testing");

    TrainArgs train;
    auto* c_train = app.add_subcommand("train-toy", "Overfit a small synthetic regression task");
    c_train->add_option("--steps", train.cfg.steps, "Gradient-descent steps")->capture_default_str();
    c_train->add_option("--lr", train.cfg.lr, "Learning rate")->capture_default_str();
    c_train->add_option("--seed", train.cfg.seed, "Seed")->capture_default_str();
    c_train->add_option("--samples", train.cfg.samples, "Samples (1 to 16)")
        ->check(CLI::Range(1, 16))
        ->capture_default_str();
    c_train->add_option("--scope", train.scope, "What trains with the head")
        ->check(CLI::IsMember({"head", "module", "backbone"}))
        ->capture_default_str();
    c_train->add_option("--every", train.every, "Print every N steps (0 = all)")->capture_default_str();

    AnalyzeArgs an;
    auto* c_an = app.add_subcommand("analyze", "Selective receptive-field ratio and selection difference CSVs");
    c_an->add_option("--masks", an.masks, "Directory of per-image mask directories")->required();
    c_an->add_option("--annotations", an.annotations, "Directory of per-image DOTA .txt files")->required();
    c_an->add_option("--out", an.out, "Output directory for rc.csv and selection_diff.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*c_plan) return run_plan(plan);
        if (*c_validate) return run_validate(validate);
        if (*c_count) return run_count(count);
        if (*c_fwd) return run_forward(fwd);
        if (*c_gc) return run_gradcheck(gc);
        if (*c_train) return run_train(train);
        if (*c_an) return run_analyze(an);
    } catch (const CLI::ValidationError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitDomain;
    }
    return kExitUsage;
}
