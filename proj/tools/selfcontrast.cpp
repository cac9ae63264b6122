// Command-line front end for the Self-Contrast toy pipeline.
//
// Subcommands map one-to-one onto pipeline stages (gen-corpus, sft, sample,
// filter, train-dpo, eval, simulate-theorem), plus `pipeline` to run the
// whole chain, and `compare-negatives` for the negatives-vs-more-pairs
// comparison. `--stage NAME` is an alias for the per-stage subcommands.
//
// Exit codes: 0 success, 2 config error, 3 stage failure.

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "selfcontrast/pipeline.hpp"

namespace {

using namespace selfcontrast;

struct GlobalArgs {
    std::string config_path;
    std::string out_dir = "run";
    uint64_t seed = 0;
    bool seed_set = false;
    bool dry_run = false;
    std::string stage;
};

RunConfig resolve_config(const GlobalArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = load_run_config(args.config_path);
    if (args.seed_set) {
        cfg.root_seed = args.seed;
        cfg.seeds_resolved = false;
        cfg.corpus.seed = cfg.sft.seed = cfg.sample.seed = cfg.filter.seed = cfg.dpo.seed =
            cfg.eval.seed = cfg.theorem.seed = 0;
    }
    cfg.resolve_seeds();
    cfg.validate();
    return cfg;
}

int run_one_stage(const GlobalArgs& args, const std::string& stage) {
    const RunConfig cfg = resolve_config(args);
    if (args.dry_run) {
        std::cout << "dry-run: would run stage " << stage << " in " << args.out_dir << "\n";
        return 0;
    }
    const auto ctx = make_stage_context(cfg, args.out_dir);
    run_stage_by_name(ctx, stage);
    std::cout << stage << ": done (" << args.out_dir << ")\n";
    return 0;
}

int run_full_pipeline(const GlobalArgs& args) {
    const RunConfig cfg = resolve_config(args);
    if (args.dry_run) {
        std::cout << "dry-run: pipeline plan for " << args.out_dir << "\n";
        for (const auto& step : pipeline_plan(cfg)) std::cout << "  " << step << "\n";
        return 0;
    }
    const auto summary = run_pipeline(cfg, args.out_dir);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

std::vector<int> parse_int_list(const std::string& csv, const char* what) {
    std::vector<int> out;
    std::string token;
    std::istringstream ss(csv);
    while (std::getline(ss, token, ','))
        if (!token.empty()) {
            try {
                out.push_back(std::stoi(token));
            } catch (const std::exception&) {
                throw ConfigError(std::string(what) + ": bad integer \"" + token + "\"");
            }
        }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-Contrast toy pipeline: feedback-free alignment with "
                 "multi-negative DPO on a tiny exact-softmax policy"};
    app.require_subcommand(0, 1);

    GlobalArgs args;
    app.add_option("--config", args.config_path, "JSON run configuration")
        ->check(CLI::ExistingFile);
    app.add_option("--out", args.out_dir, "run directory for artifacts");
    auto* seed_opt = app.add_option("--seed", args.seed, "override the root seed");
    app.add_flag("--dry-run", args.dry_run, "print the plan, write nothing");
    app.add_option("--stage", args.stage,
                   "run one stage by name (alias for the per-stage subcommands)");

    static const std::vector<std::string> kStages = {"gen-corpus", "sft",  "sample",
                                                     "filter",     "train-dpo", "eval",
                                                     "simulate-theorem"};
    for (const auto& name : kStages)
        app.add_subcommand(name, "run the " + name + " stage")->fallthrough();
    app.add_subcommand("pipeline", "run every stage in order")->fallthrough();

    auto* compare = app.add_subcommand("compare-negatives",
                                       "win rate vs negatives count and vs 1:1 pair count");
    compare->fallthrough();
    std::string m_csv = "1,2,4,8", pair_csv;
    compare->add_option("--m-list", m_csv, "comma-separated negative counts");
    compare->add_option("--pair-list", pair_csv, "comma-separated 1:1 pair counts per prompt");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    args.seed_set = seed_opt->count() > 0;

    try {
        if (compare->parsed()) {
            const auto m_list = parse_int_list(m_csv, "--m-list");
            const auto pair_list = parse_int_list(pair_csv, "--pair-list");
            if (m_list.empty() && pair_list.empty())
                throw ConfigError("compare-negatives: --m-list/--pair-list are both empty");
            const RunConfig cfg = resolve_config(args);
            if (args.dry_run) {
                std::cout << "dry-run: compare-negatives in " << args.out_dir << "\n";
                return 0;
            }
            run_compare_negatives(cfg, args.out_dir, m_list, pair_list);
            std::cout << "compare-negatives: wrote " << args.out_dir
                      << "/compare_negatives.csv\n";
            return 0;
        }
        for (const auto& name : kStages)
            if (app.got_subcommand(name)) return run_one_stage(args, name);
        if (app.got_subcommand("pipeline")) return run_full_pipeline(args);
        if (!args.stage.empty()) return run_one_stage(args, args.stage);
        std::cerr << app.help() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CLI::Error& e) {
        std::cerr << "cli error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "stage failure: " << e.what() << "\n";
        return 3;
    }
}
