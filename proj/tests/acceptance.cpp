// Acceptance suite: one PASS/FAIL line per criterion, exit status 0 only if
// every criterion passes within its runtime budget.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "protoens/cli.hpp"
#include "protoens/ensemble.hpp"
#include "protoens/episodic.hpp"
#include "protoens/io.hpp"
#include "protoens/metrics.hpp"
#include "protoens/oracle.hpp"
#include "protoens/report.hpp"
#include "protoens/synthetic.hpp"
#include "test_helpers.hpp"

namespace pe = protoens;
using pe::testing::max_abs_diff;
using pe::testing::random_branch;
using pe::testing::random_branch_like;
using pe::testing::random_mask;
using pe::testing::random_volume;
using pe::testing::TempDir;

namespace {

// Collects failed sub-checks of one criterion.
class Checks {
public:
    void expect(bool ok, const std::string& what) {
        ++total_;
        if (!ok && failures_.size() < 10) failures_.push_back(what);
        if (!ok) ++failed_;
    }
    void note(const std::string& line) { notes_.push_back(line); }
    bool ok() const { return failed_ == 0; }
    std::size_t total() const { return total_; }
    std::size_t failed() const { return failed_; }
    const std::vector<std::string>& failures() const { return failures_; }
    const std::vector<std::string>& notes() const { return notes_; }

private:
    std::size_t total_ = 0;
    std::size_t failed_ = 0;
    std::vector<std::string> failures_;
    std::vector<std::string> notes_;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

// ---------------------------------------------------------------------------

void table_arithmetic(Checks& c) {
    const std::vector<double> vgg16{0.4075, 0.5751, 0.5053, 0.4108};
    const double mean = pe::miou(vgg16);
    c.expect(std::abs(mean - 0.4747) <= 0.00005, "fold mean " + fmt("%.6f", mean) + " vs 0.4747");
    c.note("VGG16 cross-fold mean " + fmt("%.6f", mean));

    const std::string voting = pe::format_relative_improvement(pe::relative_improvement(0.5097, 0.4747));
    const std::string fusion = pe::format_relative_improvement(pe::relative_improvement(0.2467, 0.2229));
    c.expect(voting == "+7.37%", "voting improvement " + voting);
    c.expect(fusion == "+10.68%", "fusion improvement " + fusion);
    c.note("voting " + voting + ", fusion " + fusion);
}

// ---------------------------------------------------------------------------

constexpr int kOracleCases = 250;

struct CaseShape {
    std::size_t h, w, channels, ways, shots;
    double alpha;
};

CaseShape random_shape(std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> dim(2, 12), ch(1, 16), ways(1, 3), shots(1, 3);
    std::uniform_real_distribution<double> alpha(0.25, 25.0);
    return {dim(rng), dim(rng), ch(rng), ways(rng), shots(rng), alpha(rng)};
}

void oracle_equivalence(Checks& c) {
    std::mt19937_64 rng(20240501);
    double worst_head = 0, worst_pm = 0, worst_ls = 0, worst_fuse = 0, worst_proto = 0;
    std::size_t iou_cases = 0;

    for (int i = 0; i < kOracleCases; ++i) {
        const auto s = random_shape(rng);
        const auto b0 = random_branch(rng, s.h, s.w, s.channels, s.ways, s.shots, "a");

        // Prototype head.
        const auto protos = pe::build_prototypes(b0.supports);
        const auto oracle_protos = pe::oracle::oracle_prototypes(b0.supports);
        for (std::size_t j = 0; j < protos.size(); ++j) {
            worst_proto = std::max(worst_proto, max_abs_diff(protos.prototypes()[j].vector,
                                                             oracle_protos.prototypes()[j].vector));
        }
        const auto head = pe::predict_probability_map(b0.query, protos, s.alpha);
        const auto head_oracle = pe::oracle::oracle_predict(b0.query, oracle_protos, s.alpha);
        worst_head = std::max(worst_head, max_abs_diff(head.values(), head_oracle.values()));

        // Voting over 2-3 branches with random normalized weights.
        std::vector<pe::BackboneBranch> branches{b0};
        const std::size_t n = 2 + static_cast<std::size_t>(i % 2);
        std::uniform_int_distribution<std::size_t> ch(1, 16);
        for (std::size_t b = 1; b < n; ++b) {
            branches.push_back(random_branch_like(rng, b0, ch(rng), "b" + std::to_string(b)));
        }
        std::uniform_real_distribution<double> u(0.05, 1.0);
        std::vector<double> w(n);
        double sum = 0.0;
        for (auto& x : w) sum += (x = u(rng));
        for (auto& x : w) x /= sum;
        double rest = 0.0;
        for (std::size_t b = 0; b + 1 < n; ++b) rest += w[b];
        w.back() = 1.0 - rest;

        const auto pm = pe::vote(branches, {w, pe::VoteMode::kPosteriorMean}, s.alpha);
        const auto pm_o = pe::oracle::oracle_vote(branches, w, pe::VoteMode::kPosteriorMean, s.alpha);
        worst_pm = std::max(worst_pm, max_abs_diff(pm.values(), pm_o.values()));
        const auto ls = pe::vote(branches, {w, pe::VoteMode::kLogitSum}, s.alpha);
        const auto ls_o = pe::oracle::oracle_vote(branches, w, pe::VoteMode::kLogitSum, s.alpha);
        worst_ls = std::max(worst_ls, max_abs_diff(ls.values(), ls_o.values()));

        // Fusion.
        const auto fused = pe::predict_branch(pe::fuse(branches), s.alpha).probs;
        const auto fused_o = pe::oracle::oracle_fuse_predict(branches, s.alpha);
        worst_fuse = std::max(worst_fuse, max_abs_diff(fused.values(), fused_o.values()));

        // IoU from accumulated counts vs set arithmetic.
        std::vector<std::uint8_t> alphabet{0, 255};
        for (std::size_t l = 1; l <= s.ways; ++l) alphabet.push_back(static_cast<std::uint8_t>(l));
        const auto pred = random_mask(rng, s.h, s.w, {0, 1, 2, 3});
        const auto gt = random_mask(rng, s.h, s.w, alphabet);
        std::vector<std::uint8_t> classes{0, 1, 2, 3};
        pe::ConfusionCounts counts;
        pe::accumulate(counts, pred, gt, classes);
        for (auto cls : classes) {
            const double got = pe::iou(counts, cls);
            const double want = pe::oracle::oracle_iou(pred, gt, cls);
            c.expect(got == want, "iou case " + std::to_string(i) + " class " + std::to_string(cls));
        }
        ++iou_cases;
    }

    c.expect(worst_proto <= 1e-6, "prototypes max diff " + fmt("%.3g", worst_proto));
    c.expect(worst_head <= 1e-6, "prototype head max diff " + fmt("%.3g", worst_head));
    c.expect(worst_pm <= 1e-6, "posterior-mean vote max diff " + fmt("%.3g", worst_pm));
    c.expect(worst_ls <= 1e-6, "logit-sum vote max diff " + fmt("%.3g", worst_ls));
    c.expect(worst_fuse <= 1e-6, "fusion max diff " + fmt("%.3g", worst_fuse));
    c.note(std::to_string(kOracleCases) + " cases each; max |diff| head " + fmt("%.2g", worst_head) +
           ", posterior-mean " + fmt("%.2g", worst_pm) + ", logit-sum " + fmt("%.2g", worst_ls) +
           ", fusion " + fmt("%.2g", worst_fuse) + "; IoU exact on " + std::to_string(iou_cases));
}

// ---------------------------------------------------------------------------

void algebraic_invariants(Checks& c) {
    std::mt19937_64 rng(77);
    constexpr int kCases = 200;
    std::uniform_real_distribution<double> alpha(0.05, 50.0), scale(0.01, 100.0);

    for (int i = 0; i < kCases; ++i) {
        const auto s = random_shape(rng);
        const auto b = random_branch(rng, s.h, s.w, s.channels, s.ways, s.shots);
        const auto protos = pe::build_prototypes(b.supports);
        const auto mask = pe::predict_mask(b.query, protos, s.alpha);
        const std::string tag = " (case " + std::to_string(i) + ")";

        // Alpha invariance of the decoded mask.
        c.expect(pe::predict_mask(b.query, protos, alpha(rng)) == mask, "alpha invariance" + tag);

        // Joint positive rescaling of query and prototypes.
        const double lambda = scale(rng);
        std::vector<float> q(b.query.data().begin(), b.query.data().end());
        for (auto& v : q) v = static_cast<float>(v * lambda);
        std::vector<pe::Prototype> ps(protos.prototypes().begin(), protos.prototypes().end());
        for (auto& p : ps) {
            for (auto& v : p.vector) v = static_cast<float>(v * lambda);
        }
        c.expect(pe::predict_mask(pe::FeatureVolume(s.h, s.w, s.channels, q), pe::PrototypeSet(ps), s.alpha) ==
                     mask,
                 "cosine scale invariance" + tag);

        // Single-branch ensemble identity, every strategy and mode.
        const std::vector<pe::BackboneBranch> one{b};
        const auto head = pe::predict_probability_map(b.query, protos, s.alpha);
        for (auto strategy : {pe::Strategy::kSingle, pe::Strategy::kVoting, pe::Strategy::kFusion}) {
            for (auto mode : {pe::VoteMode::kPosteriorMean, pe::VoteMode::kLogitSum}) {
                const auto e = pe::predict_ensemble(one, strategy, {{}, mode}, s.alpha);
                c.expect(e.mask == mask && max_abs_diff(e.probs.values(), head.values()) == 0.0,
                         "single-branch identity " + std::string(pe::to_string(strategy)) + tag);
            }
        }

        // fuse(b, b) decodes like b.
        const std::vector<pe::BackboneBranch> twice{b, b};
        c.expect(pe::predict_ensemble(twice, pe::Strategy::kFusion, {}, s.alpha).mask == mask,
                 "fuse(b,b) mask identity" + tag);

        // Posterior mean over B copies is the branch itself.
        const std::vector<pe::BackboneBranch> copies(3, b);
        c.expect(max_abs_diff(pe::vote(copies, {}, s.alpha).values(), head.values()) == 0.0,
                 "posterior mean of copies" + tag);

        // Vote normalization, permutation equivariance, fusion order.
        std::vector<pe::BackboneBranch> mixed{b, random_branch_like(rng, b, 1 + i % 9, "x"),
                                              random_branch_like(rng, b, 2 + i % 5, "y")};
        const std::vector<double> w{0.5, 0.3, 0.2};
        const auto pm = pe::vote(mixed, {w, pe::VoteMode::kPosteriorMean}, s.alpha);
        const auto ls = pe::vote(mixed, {w, pe::VoteMode::kLogitSum}, s.alpha);
        c.expect(pm.normalization_error() <= 1e-6, "vote normalization (posterior-mean)" + tag);
        c.expect(ls.normalization_error() <= 1e-6, "vote normalization (logit-sum)" + tag);
        const std::vector<pe::BackboneBranch> permuted{mixed[2], mixed[0], mixed[1]};
        const std::vector<double> pw{0.2, 0.5, 0.3};
        c.expect(max_abs_diff(pe::vote(permuted, {pw, pe::VoteMode::kPosteriorMean}, s.alpha).values(),
                              pm.values()) <= 1e-7,
                 "vote permutation equivariance" + tag);
        c.expect(pe::predict_ensemble(mixed, pe::Strategy::kFusion, {}, s.alpha).mask ==
                     pe::predict_ensemble(permuted, pe::Strategy::kFusion, {}, s.alpha).mask,
                 "fusion branch-order invariance" + tag);

        // K identical shots and shot order.
        const auto& shot = b.supports[0].shots[0];
        const std::vector<pe::Shot> single{shot};
        const std::vector<pe::Shot> repeated(4, shot);
        c.expect(pe::masked_average_pool(repeated, 1).vector == pe::masked_average_pool(single, 1).vector,
                 "K identical shots" + tag);
        auto shots = b.supports[0].shots;
        const auto before = pe::masked_average_pool(shots, 1).vector;
        std::reverse(shots.begin(), shots.end());
        c.expect(max_abs_diff(pe::masked_average_pool(shots, 1).vector, before) <= 1e-7,
                 "shot permutation" + tag);
    }

    // Masked average pool against a naive loop on 16x16x8.
    for (int i = 0; i < 50; ++i) {
        std::vector<pe::Shot> shots;
        for (int k = 0; k < 1 + i % 3; ++k) {
            shots.push_back({random_volume(rng, 16, 16, 8), pe::testing::random_support_mask(rng, 16, 16, 2)});
        }
        const auto got = pe::masked_average_pool(shots, 2).vector;
        const auto want = pe::oracle::oracle_masked_average_pool(shots, 2);
        double worst = 0.0;
        for (std::size_t ch = 0; ch < want.size(); ++ch) worst = std::max(worst, std::abs(got[ch] - want[ch]));
        c.expect(worst <= 1e-6, "masked pool vs loop " + fmt("%.3g", worst));
    }

    // Fold partitions.
    for (int n : {4, 8, 20, 80, 252}) {
        const auto folds = pe::build_folds(n);
        std::vector<int> hits(n + 1, 0);
        bool ok = folds.size() == 4;
        for (const auto& f : folds) {
            ok &= f.test_classes.size() == static_cast<std::size_t>(n / 4);
            ok &= f.test_classes.size() + f.train_classes.size() == static_cast<std::size_t>(n);
            for (auto cls : f.test_classes) {
                ++hits[cls];
                ok &= std::find(f.train_classes.begin(), f.train_classes.end(), cls) == f.train_classes.end();
            }
        }
        for (int cls = 1; cls <= n; ++cls) ok &= hits[cls] == 1;
        c.expect(ok, "fold partition for " + std::to_string(n) + " classes");
    }
    c.note(std::to_string(c.total()) + " checks over " + std::to_string(kCases) + " random episodes");
}

// ---------------------------------------------------------------------------

double cross_fold_miou(const pe::Manifest& m, pe::RunConfig cfg, std::vector<std::string> backbones,
                       pe::Strategy strategy) {
    cfg.backbones = std::move(backbones);
    cfg.strategy = cfg.backbones.size() == 1 ? pe::Strategy::kSingle : strategy;
    std::vector<double> per_fold;
    for (const auto& fold : pe::build_folds(m.class_count)) per_fold.push_back(pe::run_evaluation(m, fold, cfg).miou);
    return pe::miou(per_fold);
}

constexpr int kSeeds = 10;
constexpr std::size_t kComplementarityEpisodes = 200;

void complementarity(Checks& c) {
    int disjoint_wins = 0, triple_wins = 0;
    for (int seed = 0; seed < kSeeds; ++seed) {
        pe::RunConfig cfg;
        cfg.n_episodes = kComplementarityEpisodes;
        cfg.seed = static_cast<std::uint64_t>(seed);

        {
            TempDir dir;
            pe::SyntheticSpec spec;
            spec.corruption_map = {{1, 3, 5, 7}, {2, 4, 6, 8}};
            const auto m = pe::gen_synthetic_manifest(spec, seed, dir.path());
            const double a = cross_fold_miou(m, cfg, {"synth0"}, pe::Strategy::kSingle);
            const double b = cross_fold_miou(m, cfg, {"synth1"}, pe::Strategy::kSingle);
            const double v = cross_fold_miou(m, cfg, {"synth0", "synth1"}, pe::Strategy::kVoting);
            const bool win = v > std::max(a, b);
            disjoint_wins += win;
            c.note("seed " + std::to_string(seed) + " halves: branches " + fmt("%.4f", a) + " / " +
                   fmt("%.4f", b) + ", vote " + fmt("%.4f", v) + (win ? "" : "  <-- not above"));
        }
        {
            TempDir dir;
            const pe::SyntheticSpec spec;
            const auto m = pe::gen_synthetic_manifest(spec, seed, dir.path());
            const double all = cross_fold_miou(m, cfg, {"synth0", "synth1", "synth2"}, pe::Strategy::kVoting);
            double best_pair = 0.0;
            for (auto [i, j] : {std::pair{0, 1}, std::pair{0, 2}, std::pair{1, 2}}) {
                best_pair = std::max(best_pair, cross_fold_miou(m, cfg, {pe::synthetic_backbone_id(i),
                                                                         pe::synthetic_backbone_id(j)},
                                                                pe::Strategy::kVoting));
            }
            const bool win = all >= best_pair;
            triple_wins += win;
            c.note("seed " + std::to_string(seed) + " default: three-branch " + fmt("%.4f", all) +
                   ", best pair " + fmt("%.4f", best_pair) + (win ? "" : "  <-- below"));
        }
    }
    c.expect(disjoint_wins == kSeeds, "disjoint-halves vote above both branches on " +
                                          std::to_string(disjoint_wins) + "/10 seeds");
    c.expect(triple_wins >= 8, "three-branch >= every pair on " + std::to_string(triple_wins) + "/10 seeds");
    c.note("vote > max(branch): " + std::to_string(disjoint_wins) + "/10; three-branch >= pairs: " +
           std::to_string(triple_wins) + "/10");
}

// ---------------------------------------------------------------------------

int cli(const std::vector<std::string>& args, std::string* err = nullptr) {
    std::ostringstream out, e;
    const int code = pe::run_cli(args, out, e);
    if (err) *err = e.str();
    return code;
}

void determinism(Checks& c) {
    TempDir dir;
    const auto data = (dir.path() / "data").string();
    const auto again = (dir.path() / "again").string();
    std::string err;
    c.expect(cli({"synth", "--out", data, "--seed", "17"}, &err) == 0, "synth: " + err);
    c.expect(cli({"synth", "--out", again, "--seed", "17"}, &err) == 0, "synth again: " + err);
    const auto m = pe::load_manifest(dir.path() / "data/manifest.json");
    bool same_files = pe::read_file_bytes(dir / "data/manifest.json") ==
                      pe::read_file_bytes(dir / "again/manifest.json");
    for (const auto& img : m.images) {
        same_files &= pe::read_file_bytes(m.resolve(img.mask)) ==
                      pe::read_file_bytes(dir.path() / "again" / img.mask);
        for (const auto& [b, p] : img.features) {
            same_files &= pe::read_file_bytes(m.resolve(p)) == pe::read_file_bytes(dir.path() / "again" / p);
        }
    }
    c.expect(same_files, "synthetic data differs between identical generations");

    const auto manifest = data + "/manifest.json";
    std::vector<std::vector<std::uint8_t>> reports;
    for (const char* threads : {"1", "1", "4"}) {
        const auto out = dir / ("report_" + std::to_string(reports.size()) + ".json");
        c.expect(cli({"eval", "--manifest", manifest, "--episodes", "150", "--seed", "3", "--threads", threads,
                      "--out", out.string()},
                     &err) == 0,
                 "eval: " + err);
        reports.push_back(pe::read_file_bytes(out));
    }
    c.expect(!reports[0].empty() && reports[0] == reports[1], "two identical runs gave different reports");
    c.expect(reports[0] == reports[2], "thread count changed the report");

    for (const char* strategy : {"fusion", "voting"}) {
        std::vector<std::vector<std::uint8_t>> pair;
        for (int r = 0; r < 2; ++r) {
            const auto out = dir / ("s_" + std::string(strategy) + std::to_string(r) + ".json");
            cli({"eval", "--manifest", manifest, "--episodes", "60", "--seed", "9", "--strategy", strategy,
                 "--vote-mode", "logit-sum", "--repeats", "2", "--shots", "2", "--out", out.string()});
            pair.push_back(pe::read_file_bytes(out));
        }
        c.expect(!pair[0].empty() && pair[0] == pair[1], std::string(strategy) + " reports differ");
    }
    c.note("reports byte-identical across repeated runs and thread counts (" +
           std::to_string(reports[0].size()) + " bytes)");
}

// ---------------------------------------------------------------------------

void perfect_separation(Checks& c) {
    TempDir dir;
    pe::SyntheticSpec spec;
    spec.noise_sigma = 0.0;
    spec.corruption_map = {{}};
    const auto m = pe::gen_synthetic_manifest(spec, 5, dir.path());
    pe::RunConfig cfg;
    cfg.n_episodes = 250;
    cfg.strategy = pe::Strategy::kSingle;
    double worst = 1.0;
    for (const auto& fold : pe::build_folds(m.class_count)) {
        const auto r = pe::run_evaluation(m, fold, cfg);
        for (std::size_t i = 0; i < r.classes.size(); ++i) {
            worst = std::min(worst, r.per_class_iou[i]);
            c.expect(r.per_class_iou[i] >= 0.99, "fold " + std::to_string(fold.fold_index) + " class " +
                                                     std::to_string(r.classes[i]) + " IoU " +
                                                     fmt("%.4f", r.per_class_iou[i]));
        }
    }
    c.note("lowest foreground IoU " + fmt("%.4f", worst));
}

// ---------------------------------------------------------------------------

struct Criterion {
    const char* name;
    double budget_seconds;
    std::function<void(Checks&)> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {"table-arithmetic", 1.0, table_arithmetic},
        {"oracle-equivalence", 30.0, oracle_equivalence},
        {"algebraic-invariants", 30.0, algebraic_invariants},
        {"complementarity", 300.0, complementarity},
        {"determinism", 60.0, determinism},
        {"perfect-separation", 60.0, perfect_separation},
    };

    int failed = 0;
    for (const auto& cr : criteria) {
        Checks checks;
        const auto start = std::chrono::steady_clock::now();
        try {
            cr.run(checks);
        } catch (const std::exception& e) {
            checks.expect(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_time = secs <= cr.budget_seconds;
        const bool pass = checks.ok() && in_time;
        failed += !pass;

        for (const auto& n : checks.notes()) std::cout << "    " << n << "\n";
        for (const auto& f : checks.failures()) std::cout << "    failed: " << f << "\n";
        if (checks.failed() > checks.failures().size()) {
            std::cout << "    ... " << checks.failed() - checks.failures().size() << " more\n";
        }
        std::printf("%s %s (%.2fs, budget %.0fs%s)\n", pass ? "PASS" : "FAIL", cr.name, secs,
                    cr.budget_seconds, in_time ? "" : ", over budget");
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
