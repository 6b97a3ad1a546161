#include "protoens/cli.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "protoens/episodic.hpp"
#include "protoens/error.hpp"
#include "protoens/report.hpp"
#include "protoens/synthetic.hpp"

namespace protoens {

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto b = item.find_first_not_of(" \t");
        const auto e = item.find_last_not_of(" \t");
        if (b == std::string::npos) {
            throw InvalidConfig("empty entry in list \"" + text + "\"");
        }
        out.push_back(item.substr(b, e - b + 1));
    }
    return out;
}

double parse_real(const std::string& text, const std::string& flag) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw InvalidConfig(flag + ": \"" + text + "\" is not a number");
}

struct EvalOptions {
    std::string manifest;
    std::string fold = "all";
    std::string backbones;
    std::string strategy = "voting";
    std::string vote_mode = "posterior-mean";
    std::string weights;
    std::string alpha = "1.0";
    std::size_t episodes = 1000;
    std::uint64_t seed = 0;
    std::size_t shots = 1;
    std::size_t ways = 1;
    std::size_t repeats = 1;
    std::size_t threads = 0;
    bool include_background = false;
    bool fusion_l2 = false;
    bool no_validate = false;
    std::string out;
    std::string dump_masks;
    std::string baseline;
};

int run_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    const auto strategy = parse_strategy(o.strategy);
    if (!strategy) throw InvalidConfig("--strategy: unknown strategy \"" + o.strategy + "\"");
    cfg.strategy = *strategy;
    const auto mode = parse_vote_mode(o.vote_mode);
    if (!mode) throw InvalidConfig("--vote-mode: unknown mode \"" + o.vote_mode + "\"");
    cfg.voting.mode = *mode;
    if (!o.weights.empty()) {
        for (const auto& w : split_list(o.weights)) cfg.voting.weights.push_back(parse_real(w, "--weights"));
    }
    cfg.alpha = o.alpha == "panet" ? kPanetAlpha : parse_real(o.alpha, "--alpha");
    if (!(cfg.alpha > 0.0) || !std::isfinite(cfg.alpha)) {
        throw InvalidConfig("--alpha must be a positive number");
    }
    if (o.episodes == 0) throw InvalidConfig("--episodes must be at least 1");
    cfg.n_episodes = o.episodes;
    cfg.seed = o.seed;
    cfg.k_shot = o.shots;
    cfg.n_way = o.ways;
    cfg.repeats = o.repeats;
    cfg.threads = o.threads;
    cfg.include_background = o.include_background;
    cfg.fusion.l2_normalize = o.fusion_l2;
    if (!o.dump_masks.empty()) cfg.dump_masks = o.dump_masks;
    if (!o.backbones.empty()) cfg.backbones = split_list(o.backbones);

    std::optional<std::size_t> single_fold;
    if (o.fold != "all") {
        if (o.fold.size() != 1 || o.fold[0] < '0' || o.fold[0] > '3') {
            throw InvalidConfig("--fold must be 0, 1, 2, 3 or all, got \"" + o.fold + "\"");
        }
        single_fold = static_cast<std::size_t>(o.fold[0] - '0');
    }

    const Manifest manifest = load_manifest(o.manifest);
    const auto backbones = resolve_backbones(manifest, cfg);
    if (backbones.size() == 1 && cfg.strategy != Strategy::kSingle) {
        err << "warning: strategy '" << to_string(cfg.strategy)
            << "' with one backbone degenerates to 'single'\n";
        cfg.strategy = Strategy::kSingle;
        cfg.voting.weights.clear();
    }
    cfg.backbones = backbones;
    if (cfg.strategy == Strategy::kVoting) cfg.voting.resolved_weights(backbones.size());

    if (!o.no_validate) {
        const auto problems = validate_manifest(manifest, backbones);
        if (!problems.empty()) {
            for (const auto& p : problems) err << "manifest " << o.manifest << ": " << p << "\n";
            return kExitDataError;
        }
    }

    std::vector<FoldSpec> folds;
    try {
        folds = build_folds(manifest.class_count);
    } catch (const InvalidArgument& e) {
        throw ManifestError(o.manifest + ": " + e.what());
    }

    EvaluationReport report;
    for (const auto& fold : folds) {
        if (single_fold && fold.fold_index != *single_fold) continue;
        report.folds.push_back(run_evaluation(manifest, fold, cfg));
    }
    if (!o.baseline.empty()) attach_baseline(report, o.baseline);

    out << report_to_table(report);
    if (!o.out.empty()) write_report(report, o.out);
    return kExitOk;
}

struct SynthOptions {
    std::string out;
    std::uint64_t seed = 0;
    std::string config;
};

int run_synth(const SynthOptions& o, CLI::App& cmd, SyntheticSpec spec_flags, const std::string& corrupt,
              std::ostream& out) {
    SyntheticSpec spec;
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw InvalidConfig("--config: cannot open " + o.config);
        std::stringstream ss;
        ss << in.rdbuf();
        spec = synthetic_spec_from_json(ss.str());
    }
    auto given = [&](const char* name) { return cmd.get_option(name)->count() > 0; };
    if (given("--classes")) spec.class_count = spec_flags.class_count;
    if (given("--height")) spec.height = spec_flags.height;
    if (given("--width")) spec.width = spec_flags.width;
    if (given("--channels")) spec.channels = spec_flags.channels;
    if (given("--separation")) spec.class_center_separation = spec_flags.class_center_separation;
    if (given("--sigma")) spec.noise_sigma = spec_flags.noise_sigma;
    if (given("--images-per-class")) spec.images_per_class = spec_flags.images_per_class;
    if (given("--no-ignore-border")) spec.ignore_border = false;
    if (given("--corrupt")) spec.corruption_map = parse_corruption_map(corrupt);
    try {
        spec.validate();
    } catch (const InvalidArgument& e) {
        throw InvalidConfig(e.what());
    }

    const Manifest m = gen_synthetic_manifest(spec, o.seed, o.out);
    out << "wrote " << m.images.size() << " images x " << m.backbones.size() << " backbones to "
        << (std::filesystem::path(o.out) / "manifest.json").string() << "\n";
    return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Prototype-based few-shot segmentation with backbone ensembling", "protoens"};
    app.require_subcommand(1);

    EvalOptions eval;
    auto* eval_cmd = app.add_subcommand("eval", "Run episodic evaluation over a manifest");
    eval_cmd->add_option("--manifest", eval.manifest, "Dataset manifest (JSON)")->required();
    eval_cmd->add_option("--fold", eval.fold, "Fold index 0-3 or 'all'");
    eval_cmd->add_option("--backbones", eval.backbones, "Comma-separated backbone ids (default: all)");
    eval_cmd->add_option("--strategy", eval.strategy, "single, voting or fusion");
    eval_cmd->add_option("--vote-mode", eval.vote_mode, "posterior-mean or logit-sum");
    eval_cmd->add_option("--weights", eval.weights, "Comma-separated voting weights (default: uniform)");
    eval_cmd->add_option("--alpha", eval.alpha, "Distance multiplier, or 'panet' for 20");
    eval_cmd->add_option("--episodes", eval.episodes, "Episodes per fold");
    eval_cmd->add_option("--seed", eval.seed, "Sampling seed");
    eval_cmd->add_option("--shots", eval.shots, "Support images per class (k)");
    eval_cmd->add_option("--ways", eval.ways, "Classes per episode");
    eval_cmd->add_option("--repeats", eval.repeats, "Seeded runs per fold, mIoU averaged");
    eval_cmd->add_option("--threads", eval.threads, "Worker threads (0: PROTOENS_THREADS or auto)");
    eval_cmd->add_flag("--include-background", eval.include_background,
                       "Report background IoU and include it in mIoU");
    eval_cmd->add_flag("--fusion-l2norm", eval.fusion_l2,
                       "Unit-normalize each backbone's features before fusion");
    eval_cmd->add_flag("--no-validate", eval.no_validate, "Skip the upfront manifest check");
    eval_cmd->add_option("--out", eval.out, "Write the JSON report here");
    eval_cmd->add_option("--dump-masks", eval.dump_masks, "Write predicted masks into this directory");
    eval_cmd->add_option("--baseline", eval.baseline, "Earlier report to compare against");

    SynthOptions synth;
    SyntheticSpec spec_flags;
    std::string corrupt;
    auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic manifest directory");
    synth_cmd->add_option("--out", synth.out, "Output directory")->required();
    synth_cmd->add_option("--seed", synth.seed, "Generation seed");
    synth_cmd->add_option("--config", synth.config, "JSON spec; flags override its fields");
    synth_cmd->add_option("--classes", spec_flags.class_count, "Foreground class count");
    synth_cmd->add_option("--height", spec_flags.height, "Grid height");
    synth_cmd->add_option("--width", spec_flags.width, "Grid width");
    synth_cmd->add_option("--channels", spec_flags.channels, "Channels per backbone");
    synth_cmd->add_option("--separation", spec_flags.class_center_separation, "Class center scale");
    synth_cmd->add_option("--sigma", spec_flags.noise_sigma, "Per-channel noise std");
    synth_cmd->add_option("--images-per-class", spec_flags.images_per_class, "Images per class");
    synth_cmd->add_option("--corrupt", corrupt,
                          "Per-backbone corrupted classes, e.g. \"1,4,7;2,5,8;3,6\"");
    synth_cmd->add_flag("--no-ignore-border", "Do not mark blob borders as ignore");

    std::string validate_manifest_path;
    std::string validate_backbones;
    auto* validate_cmd = app.add_subcommand("validate", "Check every file a manifest references");
    validate_cmd->add_option("--manifest", validate_manifest_path, "Dataset manifest")->required();
    validate_cmd->add_option("--backbones", validate_backbones, "Comma-separated backbone ids");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        if (eval_cmd->parsed()) return run_eval(eval, out, err);
        if (synth_cmd->parsed()) return run_synth(synth, *synth_cmd, spec_flags, corrupt, out);
        if (validate_cmd->parsed()) {
            const Manifest m = load_manifest(validate_manifest_path);
            std::vector<std::string> backbones;
            if (!validate_backbones.empty()) backbones = split_list(validate_backbones);
            const auto problems = validate_manifest(m, backbones);
            for (const auto& p : problems) err << validate_manifest_path << ": " << p << "\n";
            if (!problems.empty()) return kExitDataError;
            out << validate_manifest_path << ": ok (" << m.images.size() << " images, "
                << m.backbones.size() << " backbones)\n";
            return kExitOk;
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return kExitDataError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kExitDataError;
    }
    return kExitConfigError;
}

}  // namespace protoens
