// Command-line front end. Talks to the library only through sf3d.h.
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sf3d/sf3d.h"

namespace {

// Library failure: one-line diagnostic, exit 1.
struct Failure {
    sf3d_status status;
    std::string message;
};

void ok(sf3d_status s) {
    if (s != SF3D_OK) throw Failure{s, sf3d_last_error()};
}

struct ConfigDeleter {
    void operator()(sf3d_config* c) const { sf3d_config_free(c); }
};
struct ModelDeleter {
    void operator()(sf3d_model* m) const { sf3d_model_free(m); }
};
using ConfigPtr = std::unique_ptr<sf3d_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<sf3d_model, ModelDeleter>;

std::string take(char* s) {
    std::string out = s ? s : "";
    sf3d_string_free(s);
    return out;
}

struct ConfigOptions {
    std::string path;
    std::vector<std::string> overrides;

    void attach(CLI::App* cmd) {
        cmd->add_option("-c,--config", path, "Run config (flat JSON, dotted keys)")->check(CLI::ExistingFile);
        cmd->add_option("--set", overrides, "Override a config key: key=value (repeatable)");
    }

    ConfigPtr build(const std::vector<std::string>& extra = {}) const {
        sf3d_config* raw = nullptr;
        ok(path.empty() ? sf3d_config_default(&raw) : sf3d_config_load(path.c_str(), &raw));
        ConfigPtr cfg(raw);
        for (const std::string& kv : overrides) ok(sf3d_config_set(cfg.get(), kv.c_str()));
        for (const std::string& kv : extra) ok(sf3d_config_set(cfg.get(), kv.c_str()));
        ok(sf3d_config_validate(cfg.get()));
        return cfg;
    }
};

std::string config_value(const sf3d_config* cfg, const std::string& key) {
    char* json = nullptr;
    ok(sf3d_config_to_json(cfg, &json));
    const std::string text = take(json);
    // Keys are unique and quoted, so a plain scan finds the value text.
    const std::string needle = "\"" + key + "\": ";
    const size_t at = text.find(needle);
    if (at == std::string::npos) return {};
    const size_t start = at + needle.size();
    size_t end = start;
    int depth = 0;
    for (; end < text.size(); ++end) {
        const char c = text[end];
        if (c == '[') ++depth;
        if (c == ']') --depth;
        if (depth == 0 && (c == ',' || c == '\n')) break;
    }
    std::string v = text.substr(start, end - start);
    if (v.size() >= 2 && v.front() == '"') v = v.substr(1, v.size() - 2);
    return v;
}

void write_output(const std::string& text, const std::string& path) {
    if (path.empty() || path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream os(path);
    if (!os) throw Failure{SF3D_ERR_IO, "cannot write " + path};
    os << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Volumetric segmentation transformer: data generation, training, evaluation, profiling"};
    app.set_version_flag("--version", sf3d_version());
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Write synthetic VSEG1 volumes: <out>/train and <out>/eval");
    ConfigOptions gen_cfg;
    gen_cfg.attach(gen);
    std::string gen_out;
    int64_t gen_seed = -1, gen_count = 0, gen_first = 0;
    gen->add_option("-o,--out", gen_out, "Output directory")->required();
    gen->add_option("--seed", gen_seed, "Data seed (data.seed)");
    gen->add_option("--count", gen_count, "Write a single split of this many samples into <out>");
    gen->add_option("--first-index", gen_first, "First sample index when --count is given")->check(CLI::NonNegativeNumber);

    // train
    auto* tr = app.add_subcommand("train", "Train on synthetic data; writes metrics.jsonl, run.json, checkpoints/");
    ConfigOptions tr_cfg;
    tr_cfg.attach(tr);
    std::string tr_out;
    int64_t tr_seed = -1;
    int tr_epochs = 0;
    bool tr_quiet = false;
    tr->add_option("-o,--out", tr_out, "Output directory (default: paths.out_dir, or $SF3D_OUTPUT_DIR)");
    tr->add_option("--seed", tr_seed, "Seed for weights, shuffling and augmentation");
    tr->add_option("--epochs", tr_epochs, "Number of epochs")->check(CLI::PositiveNumber);
    tr->add_flag("-q,--quiet", tr_quiet, "No per-epoch lines");

    // eval
    auto* ev = app.add_subcommand("eval", "Dice table of a checkpoint on a VSEG1 dataset directory");
    std::string ev_ckpt, ev_data, ev_out;
    int ev_batch = 4;
    bool ev_table = false;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--data", ev_data, "Dataset directory with index.json")->required()->check(CLI::ExistingDirectory);
    ev->add_option("--batch-size", ev_batch, "Evaluation batch size")->check(CLI::PositiveNumber);
    ev->add_option("-o,--out", ev_out, "Write the JSON record here instead of stdout");
    ev->add_flag("--table", ev_table, "Also print a per-class table to stderr");

    // profile
    auto* pr = app.add_subcommand("profile", "Analytic parameter and FLOP report");
    ConfigOptions pr_cfg;
    pr_cfg.attach(pr);
    std::vector<int64_t> pr_input;
    bool pr_json = false;
    std::string pr_out;
    pr->add_option("--input", pr_input, "Input shape B,C,D,H,W (default 1,C,128,128,128)")->delimiter(',')->expected(5);
    pr->add_flag("--json", pr_json, "Emit JSON instead of the table");
    pr->add_option("-o,--out", pr_out, "Write the report here instead of stdout");

    // bench-attn
    auto* ba = app.add_subcommand("bench-attn", "Attention cost sweep over sequence length N and reduction R (CSV)");
    std::vector<int64_t> ba_n{4096}, ba_r{1, 2, 4, 8};
    int64_t ba_channels = 32;
    int ba_heads = 1, ba_repeats = 3;
    uint64_t ba_seed = 0;
    std::string ba_out;
    ba->add_option("--n", ba_n, "Sequence lengths")->delimiter(',');
    ba->add_option("--r", ba_r, "Reduction ratios")->delimiter(',');
    ba->add_option("--channels", ba_channels, "Token width")->check(CLI::PositiveNumber);
    ba->add_option("--heads", ba_heads, "Attention heads")->check(CLI::PositiveNumber);
    ba->add_option("--repeats", ba_repeats, "Timed repeats; the minimum is reported")->check(CLI::PositiveNumber);
    ba->add_option("--seed", ba_seed, "Seed for tokens and weights");
    ba->add_option("-o,--out", ba_out, "CSV path (default stdout)");

    if (argc < 2) {
        std::cerr << app.help();
        return 2;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (*gen) {
            std::vector<std::string> extra;
            if (gen_seed >= 0) extra.push_back("data.seed=" + std::to_string(gen_seed));
            ConfigPtr cfg = gen_cfg.build(extra);
            if (gen_count > 0) {
                ok(sf3d_generate_dataset(cfg.get(), gen_out.c_str(), gen_first, gen_count));
                std::cout << "wrote " << gen_count << " samples to " << gen_out << '\n';
            } else {
                const int64_t n_train = std::stoll(config_value(cfg.get(), "train.train_samples"));
                const int64_t n_eval = std::stoll(config_value(cfg.get(), "train.eval_samples"));
                ok(sf3d_generate_dataset(cfg.get(), (gen_out + "/train").c_str(), 0, n_train));
                ok(sf3d_generate_dataset(cfg.get(), (gen_out + "/eval").c_str(), n_train, n_eval));
                std::cout << "wrote " << n_train << " train and " << n_eval << " eval samples to " << gen_out << '\n';
            }
        } else if (*tr) {
            std::vector<std::string> extra;
            if (!tr_out.empty()) extra.push_back("paths.out_dir=" + tr_out);
            if (tr_seed >= 0) extra.push_back("seed=" + std::to_string(tr_seed));
            if (tr_epochs > 0) extra.push_back("train.epochs=" + std::to_string(tr_epochs));
            ConfigPtr cfg = tr_cfg.build(extra);
            auto echo = [](const char* line, void*) { std::cerr << line << std::endl; };
            char* summary = nullptr;
            ok(sf3d_train(cfg.get(), tr_quiet ? nullptr : +echo, nullptr, &summary));
            std::cout << take(summary) << '\n';
        } else if (*ev) {
            sf3d_model* raw = nullptr;
            ok(sf3d_model_load(ev_ckpt.c_str(), &raw));
            ModelPtr model(raw);
            char* result = nullptr;
            ok(sf3d_model_evaluate(model.get(), ev_data.c_str(), ev_batch, &result));
            const std::string line = take(result);
            write_output(line + "\n", ev_out);
            if (ev_table) {
                // dice_per_class is a flat number array; print it one class per row.
                const size_t a = line.find("\"dice_per_class\":[") + 18, b = line.find(']', a);
                std::stringstream ss(line.substr(a, b - a));
                std::string cell;
                std::fprintf(stderr, "%-8s %s\n", "class", "dice");
                for (int k = 0; std::getline(ss, cell, ','); ++k) std::fprintf(stderr, "%-8d %.4f\n", k, std::stod(cell));
            }
        } else if (*pr) {
            ConfigPtr cfg = pr_cfg.build();
            if (pr_input.empty()) pr_input = {1, std::stoll(config_value(cfg.get(), "model.in_channels")), 128, 128, 128};
            char* json = nullptr;
            char* table = nullptr;
            ok(sf3d_profile(cfg.get(), pr_input.data(), pr_json ? &json : nullptr, pr_json ? nullptr : &table));
            write_output(pr_json ? take(json) + "\n" : take(table), pr_out);
        } else if (*ba) {
            std::ostringstream csv;
            csv << "n,reduction,channels,heads,score_flops,score_flops_ratio,layer_flops,score_ms,layer_ms\n";
            for (int64_t n : ba_n) {
                uint64_t base = 0;
                for (int64_t r : ba_r) {
                    sf3d_attn_bench b{};
                    ok(sf3d_bench_attention(n, ba_channels, ba_heads, r, ba_repeats, ba_seed, &b));
                    if (base == 0) base = b.score_flops;
                    char row[256];
                    std::snprintf(row, sizeof row, "%lld,%lld,%lld,%lld,%llu,%.10g,%llu,%.4f,%.4f\n", static_cast<long long>(b.n),
                                  static_cast<long long>(b.reduction), static_cast<long long>(b.channels),
                                  static_cast<long long>(b.heads), static_cast<unsigned long long>(b.score_flops),
                                  static_cast<double>(b.score_flops) / static_cast<double>(base),
                                  static_cast<unsigned long long>(b.layer_flops), b.score_ms, b.layer_ms);
                    csv << row;
                }
            }
            write_output(csv.str(), ba_out);
        }
    } catch (const Failure& f) {
        std::cerr << "error: " << f.message << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
