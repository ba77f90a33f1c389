// dfat - synthesize data, build knowledge banks, train, evaluate and ablate.
//
//   dfat synth  --out DIR [--classes 4 --per-class 50 --sigma 0.1 --seed 7 --multi-label]
//   dfat bank   --out DIR --data MANIFEST [--checkpoint DIR] [--config FILE] [--set k=v ...]
//   dfat train  --out DIR --data MANIFEST [--config FILE] [--set k=v ...] [--resume-from DIR]
//   dfat eval   --out DIR --data MANIFEST [--checkpoint DIR] [--config FILE] [--probe-fraction F]
//   dfat ablate --out DIR --data MANIFEST --axis AXIS --grid a,b,c [--seeds 1,2,3]
//
// Exit codes: 0 ok, 2 configuration, 3 data, 4 numerical failure.

#include "dfat/errors.hpp"
#include "dfat/experiment.hpp"
#include "dfat/io.hpp"
#include "dfat/plots.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <sstream>

namespace fs = std::filesystem;
using namespace dfat;

namespace {

struct Common {
    std::string out;
    std::string config;
    std::string data;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
};

void prepare_output_dir(const fs::path& dir) {
    if (fs::exists(dir)) {
        if (!fs::is_directory(dir)) throw ConfigError("output path " + dir.string() + " exists and is not a directory");
        if (!fs::is_empty(dir)) throw ConfigError("output directory " + dir.string() + " is not empty");
    }
    fs::create_directories(dir);
}

ExperimentConfig resolve_config(const Common& c) {
    ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config);
    std::vector<std::pair<std::string, std::string>> kv;
    if (c.seed) kv.emplace_back("seed", std::to_string(*c.seed));
    for (const auto& o : c.overrides) kv.push_back(parse_override(o));
    return cfg.with_overrides(kv);
}

void write_resolved(const fs::path& out, const io::KeyValues& kv) { kv.save(out / "resolved_config.txt"); }

data::Dataset load_data(const Common& c) {
    if (c.data.empty()) throw ConfigError("--data MANIFEST is required");
    return data::load_dataset(c.data);
}

void write_report(const fs::path& out, const std::string& stem, const eval::EvalReport& r, const std::string& name) {
    io::write_text(out / (stem + ".json"), r.to_json());
    io::write_text(out / (stem + ".txt"), r.to_table(name));
}

std::string loss_curve(const std::vector<train::LogRecord>& log) {
    plots::Series total{"L_total", {}, {}}, ca{"L_CA", {}, {}}, cg{"L_CG", {}, {}};
    for (const auto& r : log) {
        for (auto* s : {&total, &ca, &cg}) s->x.push_back(r.step);
        total.y.push_back(r.total);
        ca.y.push_back(r.ca);
        cg.y.push_back(r.cg);
    }
    return plots::line_chart_svg("training loss", {total, ca, cg}, "step", "loss");
}

int cmd_synth(const Common& c, const data::SynthConfig& sc) {
    const fs::path out = c.out;
    prepare_output_dir(out);
    const auto r = data::make_synthetic(sc, out);
    io::KeyValues kv;
    kv.set("synth.classes", sc.classes);
    kv.set("synth.per_class", sc.per_class);
    kv.set("synth.sigma", sc.sigma);
    kv.set("synth.seed", sc.seed);
    kv.set("synth.multi_label", sc.multi_label);
    kv.set("synth.num_patches", sc.num_patches);
    kv.set("synth.patch_dim", sc.patch_dim);
    kv.set("synth.motif_rate", sc.motif_rate);
    kv.set("synth.negation_rate", sc.negation_rate);
    kv.set("synth.brief_rate", sc.brief_rate);
    write_resolved(out, kv);
    data::load_dataset(r.manifest);  // the result must load cleanly
    std::cout << "wrote " << r.manifest.string() << "\n";
    return 0;
}

int cmd_bank(const Common& c, const std::string& checkpoint) {
    const fs::path out = c.out;
    auto cfg = resolve_config(c);
    const auto ds = load_data(c);
    prepare_output_dir(out);
    write_resolved(out, cfg.to_kv());
    knowledge::KnowledgeBank bank;
    if (checkpoint.empty()) {
        bank = prepare(cfg, ds).bank;
    } else {
        auto model = DfatModel::load(checkpoint);
        bank = build_bank_for(model, resolve_corpus(cfg.knowledge_corpus, ds));
    }
    knowledge::save_bank(bank, out / "bank");
    for (const auto& w : bank.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << "bank: " << bank.size() << " categories x " << bank.dim() << " dims, fingerprint " << bank.fingerprint() << "\n";
    return 0;
}

int cmd_train(const Common& c, const std::string& resume_from) {
    const fs::path out = c.out;
    auto cfg = resolve_config(c);
    const auto ds = load_data(c);
    prepare_output_dir(out);
    write_resolved(out, cfg.to_kv());

    train::FitOptions fo;
    fo.checkpoint_dir = out / "checkpoints";
    auto p = prepare(cfg, ds);
    const auto opts = eval::eval_options_from(cfg);
    if (!resume_from.empty()) {
        // Copy the interrupted run's checkpoints and continue from them.
        fs::copy(fs::path(resume_from) / "checkpoints", fo.checkpoint_dir, fs::copy_options::recursive);
        fo.resume = true;
    } else {
        write_report(out, "report_untrained", eval::evaluate(p.model, &p.bank, ds, opts), ds.manifest.name);
    }
    auto fit = train::fit(cfg, std::move(p.model), std::move(p.bank), ds, fo);
    train::save_checkpoint(out / "checkpoint", fit.model, fit.bank);

    std::ostringstream log;
    for (const auto& r : fit.state.log) log << r.to_json() << "\n";
    io::write_text(out / "train_log.jsonl", log.str());
    io::write_text(out / "loss_curve.svg", loss_curve(fit.state.log));
    const auto report = eval::evaluate(fit.model, &fit.bank, ds, opts);
    write_report(out, "report", report, ds.manifest.name);
    std::cout << report.to_table(ds.manifest.name);
    if (fit.best_val_auc) std::cout << "selected step " << fit.best_step << " (val macro AUC " << *fit.best_val_auc << ")\n";
    return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, double probe_fraction) {
    const fs::path out = c.out;
    auto cfg = resolve_config(c);
    const auto ds = load_data(c);
    prepare_output_dir(out);
    write_resolved(out, cfg.to_kv());
    DfatModel model;
    knowledge::KnowledgeBank bank;
    if (checkpoint.empty()) {
        auto p = prepare(cfg, ds);
        model = std::move(p.model);
        bank = std::move(p.bank);
    } else {
        std::tie(model, bank) = train::load_checkpoint(checkpoint);
    }
    const auto report = eval::evaluate(model, &bank, ds, eval::eval_options_from(cfg));
    write_report(out, "report", report, ds.manifest.name);
    io::write_array(out / "scores.bin", report.scores.scores);
    std::cout << report.to_table(ds.manifest.name);
    if (probe_fraction > 0.0) {
        const auto ft = train::finetune_classifier(model, ds, probe_fraction, cfg.finetune_epochs, cfg.finetune_lr, cfg.seed,
                                                   eval::eval_options_from(cfg).thresholds);
        write_report(out, "probe_report", ft.report, ds.manifest.name);
        std::cout << "linear probe on " << ft.train_samples << " samples (fraction " << probe_fraction << ")\n"
                  << ft.report.to_table(ds.manifest.name);
    }
    return 0;
}

std::vector<std::pair<std::string, std::string>> axis_overrides(const std::string& axis, const std::string& value) {
    if (axis == "token_counts") {
        const auto x = value.find('x');
        if (x == std::string::npos) throw ConfigError("token_counts grid values look like IxT, got `" + value + "`");
        return {{"tokens.image", value.substr(0, x)}, {"tokens.text", value.substr(x + 1)}};
    }
    if (axis == "layer_depth") return {{"features.layer", value}};
    if (axis == "feature_combo") return {{"loss.combo", value}};
    if (axis == "corpus_choice") return {{"knowledge.corpus", value}};
    if (axis == "lambda") return {{"loss.lambda", value}};
    throw ConfigError("unknown ablation axis `" + axis + "`");
}

int cmd_ablate(const Common& c, const std::string& axis, const std::string& grid, const std::string& seeds_text) {
    const fs::path out = c.out;
    const auto base = resolve_config(c);
    axis_overrides(axis, "1x1");  // rejects unknown axes before any work
    const auto ds = load_data(c);
    prepare_output_dir(out);
    write_resolved(out, base.to_kv());

    std::vector<std::string> values;
    for (const auto& v : io::split(grid, ',')) {
        if (!io::trim(v).empty()) values.push_back(io::trim(v));
    }
    if (values.empty()) throw ConfigError("--grid needs at least one value");
    std::vector<std::uint64_t> seeds;
    for (const auto& s : io::split(seeds_text, ',')) {
        if (!io::trim(s).empty()) seeds.push_back(std::stoull(io::trim(s)));
    }
    if (seeds.empty()) seeds.push_back(base.seed);

    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    std::vector<plots::Bar> bars;
    std::ostringstream table;
    char line[256];
    std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10s  %s\n", axis.c_str(), "macro_AUC", "macro_F1", "macro_ACC", "top1",
                  "status");
    table << line;
    for (const auto& v : values) {
        nlohmann::ordered_json row = {{"setting", v}};
        std::vector<double> aucs, f1s, accs, top1;
        std::string status = "ok";
        for (auto seed : seeds) {
            try {
                auto kv = axis_overrides(axis, v);
                kv.emplace_back("seed", std::to_string(seed));
                const auto cfg = base.with_overrides(kv);
                const auto r = run_experiment(cfg, ds);
                aucs.push_back(r.trained.macro_auc.value_or(std::nan("")));
                f1s.push_back(r.trained.macro_f1);
                accs.push_back(r.trained.macro_acc);
                top1.push_back(r.trained.top1_accuracy);
            } catch (const Error& e) {
                status = "failed: " + std::string(error_kind_name(e.kind())) + ": " + e.what();
                break;
            }
        }
        auto mean = [](const std::vector<double>& xs) { return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size()); };
        const bool ok = status == "ok";
        row["status"] = status;
        row["seeds"] = seeds;
        row["macro_auc_per_seed"] = aucs;
        if (ok) {
            row["macro_auc"] = mean(aucs);
            row["macro_f1"] = mean(f1s);
            row["macro_acc"] = mean(accs);
            row["top1_accuracy"] = mean(top1);
            std::snprintf(line, sizeof line, "%-16s %10.4f %10.4f %10.4f %10.4f  ok\n", v.c_str(), mean(aucs), mean(f1s), mean(accs),
                          mean(top1));
        } else {
            std::snprintf(line, sizeof line, "%-16s %10s %10s %10s %10s  %s\n", v.c_str(), "-", "-", "-", "-", status.c_str());
        }
        table << line;
        bars.push_back({v, ok ? std::optional<double>(mean(aucs)) : std::nullopt});
        rows.push_back(std::move(row));
    }
    nlohmann::ordered_json doc = {{"axis", axis}, {"rows", rows}};
    io::write_text(out / "ablation.json", doc.dump(2) + "\n");
    io::write_text(out / "ablation.txt", table.str());
    io::write_text(out / "ablation.svg", plots::bar_chart_svg("ablation: " + axis, bars, "macro AUC"));
    std::cout << table.str();
    return 0;
}

int run(int argc, char** argv) {
    CLI::App app{"Decoder-side feature alignment training with knowledge anchors"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub, bool needs_data) {
        sub->add_option("--out", common.out, "output directory (created, or must be empty)")->required();
        sub->add_option("--seed", common.seed, "random seed (overrides the config)");
        if (needs_data) {
            sub->add_option("--config", common.config, "key-value config file");
            sub->add_option("--data", common.data, "dataset manifest")->required();
            sub->add_option("--set", common.overrides, "config override key=value (repeatable)");
        }
    };

    data::SynthConfig sc;
    auto* synth = app.add_subcommand("synth", "generate a planted-class synthetic dataset");
    add_common(synth, false);
    synth->add_option("--classes", sc.classes, "number of classes");
    synth->add_option("--per-class", sc.per_class, "samples per class");
    synth->add_option("--sigma", sc.sigma, "image noise level");
    synth->add_flag("--multi-label", sc.multi_label, "give about half the samples a second label");
    synth->add_option("--patches", sc.num_patches, "patches per image");
    synth->add_option("--patch-dim", sc.patch_dim, "features per patch");
    synth->add_option("--motif-rate", sc.motif_rate, "probability a positive mention lists the class motif");
    synth->add_option("--negation-rate", sc.negation_rate, "probability each absent class is mentioned as negated");
    synth->add_option("--brief-rate", sc.brief_rate, "probability a report is a single positive or negated clause");

    std::string checkpoint;
    auto* bank = app.add_subcommand("bank", "build a knowledge bank");
    add_common(bank, true);
    bank->add_option("--checkpoint", checkpoint, "trained checkpoint directory");

    std::string resume_from;
    auto* trn = app.add_subcommand("train", "train and evaluate");
    add_common(trn, true);
    trn->add_option("--resume-from", resume_from, "output directory of an interrupted run");

    double probe_fraction = 0.0;
    auto* ev = app.add_subcommand("eval", "zero-shot evaluation");
    add_common(ev, true);
    ev->add_option("--checkpoint", checkpoint, "checkpoint directory (untrained model from config when omitted)");
    ev->add_option("--probe-fraction", probe_fraction, "also fit a linear probe on this fraction of the training split");

    std::string axis, grid, seeds;
    auto* abl = app.add_subcommand("ablate", "train and evaluate over a grid");
    add_common(abl, true);
    abl->add_option("--axis", axis, "token_counts | layer_depth | feature_combo | corpus_choice | lambda")->required();
    abl->add_option("--grid", grid, "comma-separated values along the axis")->required();
    abl->add_option("--seeds", seeds, "comma-separated seeds averaged per cell");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error[config]: " << e.what() << "\n" << app.help();
        return exit_code_for(ErrorKind::config);
    }
    if (synth->parsed()) {
        if (common.seed) sc.seed = *common.seed;
        return cmd_synth(common, sc);
    }
    if (bank->parsed()) return cmd_bank(common, checkpoint);
    if (trn->parsed()) return cmd_train(common, resume_from);
    if (ev->parsed()) return cmd_eval(common, checkpoint, probe_fraction);
    return cmd_ablate(common, axis, grid, seeds);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error[" << error_kind_name(e.kind()) << "]: " << e.what() << "\n";
        return exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error[internal]: " << e.what() << "\n";
        return 1;
    }
}
