#include "pointcra/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pointcra/config.hpp"
#include "pointcra/gradcheck.hpp"
#include "pointcra/pcio.hpp"
#include "pointcra/train.hpp"

namespace pointcra {

namespace {

namespace fs = std::filesystem;

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    for (const auto& l : lines) out << l << '\n';
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << text;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    return out;
}

// "0..4" or "0,1,2"
std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
    std::vector<std::uint64_t> out;
    auto dots = s.find("..");
    if (dots != std::string::npos) {
        std::uint64_t lo = std::stoull(s.substr(0, dots));
        std::uint64_t hi = std::stoull(s.substr(dots + 2));
        for (std::uint64_t v = lo; v <= hi; ++v) out.push_back(v);
    } else {
        for (const auto& p : split_csv(s)) out.push_back(std::stoull(p));
    }
    if (out.empty()) throw ConfigError("empty seed list: " + s);
    return out;
}

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    std::int64_t seed = -1;  // -1 keeps the config value
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_path, "JSON config file (or a run.json)");
    sub->add_option("--seed", args.seed, "Random seed");
    sub->add_option("--out", args.out_dir, "Output directory");
    sub->add_option("--set", args.overrides, "Override, dotted key=value (repeatable)");
}

Config resolve_config(const CommonArgs& args) {
    Config cfg = load_config(args.config_path, args.overrides);
    if (args.seed >= 0) {
        cfg.train.seed = std::uint64_t(args.seed);
        cfg.finalize();
    }
    return cfg;
}

void prepare_out(const CommonArgs& args, const std::string& command, const Config& cfg) {
    fs::create_directories(args.out_dir);
    write_text(args.out_dir + "/run.json", run_record_json(command, cfg, args.out_dir) + "\n");
}

std::string metrics_line(const char* tag, const Metrics& m) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s oa=%.6f macc=%.6f miou=%.6f", tag, m.oa, m.macc, m.miou);
    return buf;
}

int cmd_train(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    prepare_out(args, "train", cfg);

    Dataset train_set = make_dataset(cfg.data, cfg.train.seed, cfg.data.scenes, 0);
    Dataset test_set;
    bool has_test = cfg.data.test_scenes > 0;
    if (has_test) test_set = make_dataset(cfg.data, cfg.train.seed, cfg.data.test_scenes, 1);

    Backbone model(cfg.model, cfg.train.seed);
    if (!cfg.train.init_checkpoint.empty()) model.load(cfg.train.init_checkpoint);
    TrainResult tr = train_model(model, train_set, has_test ? &test_set : nullptr, cfg);

    write_lines(args.out_dir + "/metrics.csv", tr.metric_rows);
    if (cfg.train.log_steps) write_lines(args.out_dir + "/steps.csv", tr.step_rows);
    model.save(args.out_dir + "/checkpoint.bin");

    std::cout << "epochs=" << tr.epochs_run << ' ' << metrics_line("train", tr.final_train);
    if (tr.has_test) std::cout << ' ' << metrics_line("test", tr.final_test);
    std::cout << '\n';
    return 0;
}

int cmd_eval(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    if (cfg.eval_checkpoint.empty()) throw ConfigError("eval.checkpoint must be set");
    prepare_out(args, "eval", cfg);

    Dataset test_set = make_dataset(cfg.data, cfg.train.seed, cfg.data.test_scenes, 1);
    Backbone model(cfg.model, cfg.train.seed);
    model.load(cfg.eval_checkpoint);
    Metrics m = evaluate(model, test_set, cfg.train.batch_size);

    char buf[160];
    std::snprintf(buf, sizeof buf, "split,oa,macc,miou\ntest,%.12g,%.12g,%.12g", m.oa, m.macc, m.miou);
    write_text(args.out_dir + "/eval.csv", std::string(buf) + "\n");
    std::cout << metrics_line("test", m) << '\n';
    return 0;
}

int cmd_gradcheck(const CommonArgs& args, const std::vector<std::string>& suites, bool all) {
    Config cfg = resolve_config(args);
    if (all)
        cfg.gradcheck_suites.clear();
    else if (!suites.empty())
        cfg.gradcheck_suites = suites;
    prepare_out(args, "gradcheck", cfg);

    std::vector<std::string> names =
        cfg.gradcheck_suites.empty() ? gradcheck_suite_names() : cfg.gradcheck_suites;
    std::vector<std::string> rows{"suite,pass,max_rel_err,trials"};
    bool ok = true;
    for (const auto& name : names) {
        GradCheckReport r = run_gradcheck_suite(name);
        ok = ok && r.pass;
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%d,%.3e,%d", r.name.c_str(), r.pass ? 1 : 0, r.max_err,
                      r.trials);
        rows.push_back(buf);
        std::cout << (r.pass ? "PASS " : "FAIL ") << r.name << " max_rel_err=" << r.max_err << '\n';
    }
    write_lines(args.out_dir + "/gradcheck.csv", rows);
    if (!ok) throw std::runtime_error("gradient checks failed");
    return 0;
}

int cmd_stats(const CommonArgs& args) {
    Config cfg = resolve_config(args);
    prepare_out(args, "stats", cfg);

    Dataset ds = make_dataset(cfg.data, cfg.train.seed, cfg.data.scenes, 0);
    Backbone model(cfg.model, cfg.train.seed);
    if (!cfg.stats_checkpoint.empty()) model.load(cfg.stats_checkpoint);

    auto stats = collect_stats(model, ds, cfg.train.batch_size);
    write_lines(args.out_dir + "/calib_stats.csv", stats_csv_rows(stats));
    if (cfg.stats_dump)
        write_array_bundle(args.out_dir + "/intermediates.bin",
                           dump_intermediates(model, ds, cfg.train.batch_size));
    std::cout << "stages=" << stats.size() << " written=" << args.out_dir << "/calib_stats.csv\n";
    return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& variants_flag,
               const std::string& seeds_flag) {
    Config cfg = resolve_config(args);
    if (!variants_flag.empty()) cfg.ablate_variants = split_csv(variants_flag);
    if (!seeds_flag.empty()) cfg.ablate_seeds = parse_seed_list(seeds_flag);
    prepare_out(args, "ablate", cfg);

    std::vector<std::string> rows{"variant,seed,oa,macc,miou"};
    auto result = run_ablation(cfg, cfg.ablate_variants, cfg.ablate_seeds, &rows);
    write_lines(args.out_dir + "/ablation.csv", rows);

    // per-variant mean and population std
    std::vector<std::string> summary{"variant,mean_oa,std_oa,mean_macc,std_macc,mean_miou,std_miou"};
    for (const auto& v : cfg.ablate_variants) {
        double n = 0, soa = 0, soa2 = 0, sma = 0, sma2 = 0, smi = 0, smi2 = 0;
        for (const auto& r : result) {
            if (r.variant != v) continue;
            ++n;
            soa += r.test.oa;
            soa2 += r.test.oa * r.test.oa;
            sma += r.test.macc;
            sma2 += r.test.macc * r.test.macc;
            smi += r.test.miou;
            smi2 += r.test.miou * r.test.miou;
        }
        if (n == 0) continue;
        auto std_of = [n](double s, double s2) {
            double var = s2 / n - (s / n) * (s / n);
            return var > 0 ? std::sqrt(var) : 0.0;
        };
        char buf[240];
        std::snprintf(buf, sizeof buf, "%s,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g", v.c_str(), soa / n,
                      std_of(soa, soa2), sma / n, std_of(sma, sma2), smi / n, std_of(smi, smi2));
        summary.push_back(buf);
        std::cout << "variant " << v << " mean_miou=" << smi / n << '\n';
    }
    write_lines(args.out_dir + "/ablation_summary.csv", summary);
    return 0;
}

int cmd_sweep_g(const CommonArgs& args, const std::string& g_flag) {
    Config cfg = resolve_config(args);
    if (!g_flag.empty()) {
        cfg.sweep_g.clear();
        for (const auto& p : split_csv(g_flag)) cfg.sweep_g.push_back(std::stoi(p));
    }
    prepare_out(args, "sweep-g", cfg);

    auto rows = run_group_size_sweep(cfg, cfg.sweep_g);
    std::vector<std::string> csv{"g,params_cra,params_total,oa,macc,miou"};
    for (const auto& r : rows) {
        char buf[240];
        std::snprintf(buf, sizeof buf, "%d,%lld,%lld,%.12g,%.12g,%.12g", r.g,
                      (long long)r.params_cra, (long long)r.params_total, r.test.oa, r.test.macc,
                      r.test.miou);
        csv.push_back(buf);
        std::cout << "g=" << r.g << " params_cra=" << r.params_cra << '\n';
    }
    write_lines(args.out_dir + "/sweep.csv", csv);
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"Channel-relation attentive aggregation for point clouds"};
    app.require_subcommand(1);

    CommonArgs targs, eargs, gargs, sargs, aargs, wargs;
    std::vector<std::string> gc_suites;
    bool gc_all = false;
    std::string ablate_variants, ablate_seeds, sweep_gs;

    CLI::App* train = app.add_subcommand("train", "Train a model on synthetic scenes");
    add_common(train, targs);
    CLI::App* evalc = app.add_subcommand("eval", "Evaluate a checkpoint");
    add_common(evalc, eargs);
    CLI::App* grad = app.add_subcommand("gradcheck", "Finite-difference gradient suites");
    add_common(grad, gargs);
    grad->add_flag("--all", gc_all, "Run every registered suite");
    grad->add_option("--suite", gc_suites, "Suite name (repeatable)");
    CLI::App* stats = app.add_subcommand("stats", "Calibration statistics over a dataset");
    add_common(stats, sargs);
    CLI::App* ablate = app.add_subcommand("ablate", "Train the ablation grid");
    add_common(ablate, aargs);
    ablate->add_option("--variants", ablate_variants, "Comma list, e.g. baseline,A,B,C,D");
    ablate->add_option("--seeds", ablate_seeds, "Seed list: 0..4 or 0,1,2");
    CLI::App* sweep = app.add_subcommand("sweep-g", "Group-size sweep");
    add_common(sweep, wargs);
    sweep->add_option("--g", sweep_gs, "Comma list of group sizes");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {  // --help
            std::cout << app.help();
            return 0;
        }
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }

    try {
        if (train->parsed()) return cmd_train(targs);
        if (evalc->parsed()) return cmd_eval(eargs);
        if (grad->parsed()) return cmd_gradcheck(gargs, gc_suites, gc_all);
        if (stats->parsed()) return cmd_stats(sargs);
        if (ablate->parsed()) return cmd_ablate(aargs, ablate_variants, ablate_seeds);
        if (sweep->parsed()) return cmd_sweep_g(wargs, sweep_gs);
        std::cerr << "error: no command\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

}  // namespace pointcra
