#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cbformer/cbformer.h"
#include "json.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitSelfcheck = 4;

int exit_code(cbf_status s) {
    switch (s) {
        case CBF_OK: return 0;
        case CBF_ERR_VALIDATION: return kExitValidation;
        case CBF_ERR_SELFCHECK: return kExitSelfcheck;
        default: return kExitRuntime;
    }
}

int report(cbf_status s, const std::string& what) {
    if (s != CBF_OK) std::cerr << what << " failed: " << cbf_last_error() << "\n";
    return exit_code(s);
}

struct Common {
    std::string config;
    std::vector<std::string> overrides;
    std::string checkpoint;
    bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_checkpoint) {
    cmd->add_option("config", c.config, "Experiment config (JSON)")->required();
    cmd->add_option("--set", c.overrides, "Override a config key, e.g. --set training.alpha=0.5");
    if (with_checkpoint) cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint (default <run>/checkpoint.bin)");
}

class Session {
public:
    ~Session() { cbf_experiment_close(exp_); }
    cbf_status open(const Common& c) {
        std::vector<const char*> ov;
        for (const auto& o : c.overrides) ov.push_back(o.c_str());
        return cbf_experiment_open(c.config.c_str(), ov.data(), ov.size(), &exp_);
    }
    cbf_experiment* get() const { return exp_; }

private:
    cbf_experiment* exp_ = nullptr;
};

void on_step(size_t epoch, size_t step, double loss, void* user) {
    if (*static_cast<bool*>(user) || step % 20 != 0) return;
    std::fprintf(stderr, "epoch %zu step %zu loss %.6f\n", epoch, step, loss);
}

const char* ckpt(const Common& c) { return c.checkpoint.empty() ? nullptr : c.checkpoint.c_str(); }

std::vector<long> parse_shifts(const std::string& text) {
    std::vector<long> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dots = item.find("..");
        try {
            if (dots == std::string::npos) {
                out.push_back(std::stol(item));
            } else {
                const long a = std::stol(item.substr(0, dots)), b = std::stol(item.substr(dots + 2));
                for (long s = a; s <= b; ++s) out.push_back(s);
            }
        } catch (const std::exception&) {
            throw CLI::ValidationError("--shifts", "'" + item + "' is not an integer or a range a..b");
        }
    }
    return out;
}

std::vector<double> parse_alphas(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw CLI::ValidationError("--alphas", "'" + item + "' is not a number");
        }
    }
    return out;
}

bool bottleneck_active(cbf_experiment* exp) {
    const auto cfg = nlohmann::json::parse(cbf_experiment_config_json(exp));
    return cfg["bottleneck"].value("type", "none") != "none";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Concept-bottleneck Autoformer experiments"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(cbf_version()));

    Common c;
    std::string mask, origin, shifts, alphas, run_dir;

    auto* fit_ar = app.add_subcommand("fit-ar", "Fit the AR surrogate on the training split");
    add_common(fit_ar, c, false);
    auto* train = app.add_subcommand("train", "Train a model (fits the AR surrogate when missing)");
    add_common(train, c, false);
    train->add_flag("--quiet", c.quiet, "No per-step progress");
    auto* evaluate = app.add_subcommand("evaluate", "Test-split MSE/MAE of a checkpoint and the AR baseline");
    add_common(evaluate, c, true);
    auto* cka = app.add_subcommand("cka-report", "CKA of every encoder component against the concepts");
    add_common(cka, c, true);
    auto* lens = app.add_subcommand("lens", "Decoder-lens forecasts of single bottleneck components");
    add_common(lens, c, true);
    lens->add_option("--mask", mask, "Components to decode, e.g. 1,3 or all");
    lens->add_option("--origin", origin, "bottleneck or final");
    auto* intervene = app.add_subcommand("intervene", "Timestamp-shift sweep with and without intervention");
    add_common(intervene, c, true);
    intervene->add_option("--shifts", shifts, "Shifts in hours, e.g. 0..23 or 6,12,18");
    auto* sweep = app.add_subcommand("alpha-sweep", "Train and evaluate across alpha values");
    add_common(sweep, c, false);
    sweep->add_option("--alphas", alphas, "Comma-separated alphas, e.g. 0,0.3,0.5,0.7,1.0");
    sweep->add_flag("--quiet", c.quiet, "No per-step progress");
    auto* run = app.add_subcommand("run", "train, evaluate, cka-report, lens, intervene and report in sequence");
    add_common(run, c, false);
    run->add_flag("--quiet", c.quiet, "No per-step progress");
    auto* rep = app.add_subcommand("report", "Regenerate figures of a finished run directory");
    rep->add_option("run_dir", run_dir, "Run directory")->required();
    auto* validate = app.add_subcommand("validate", "Check a config and print the effective version");
    add_common(validate, c, false);
    auto* selfcheck = app.add_subcommand("selfcheck", "Gradient, CKA and decomposition checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    if (selfcheck->parsed()) {
        const cbf_status s = cbf_selfcheck(
            [](const char* name, int passed, const char* detail, void*) {
                std::printf("%-14s %s  %s\n", name, passed ? "PASS" : "FAIL", detail);
            },
            nullptr);
        if (s == CBF_OK) std::printf("all suites passed\n");
        return report(s, "selfcheck");
    }
    if (rep->parsed()) {
        const cbf_status s = cbf_emit_reports(run_dir.c_str());
        if (s == CBF_OK) std::printf("reports written to %s\n", run_dir.c_str());
        return report(s, "report");
    }

    Session session;
    if (const cbf_status s = session.open(c); s != CBF_OK) return report(s, "config");
    cbf_experiment* exp = session.get();

    if (validate->parsed()) {
        std::printf("%s\n", cbf_experiment_config_json(exp));
        return 0;
    }
    if (fit_ar->parsed()) return report(cbf_fit_ar(exp), "fit-ar");
    if (train->parsed()) {
        const cbf_status s = cbf_train(exp, on_step, &c.quiet);
        if (s == CBF_OK) std::printf("checkpoint written to %s/checkpoint.bin\n", cbf_experiment_run_dir(exp));
        return report(s, "train");
    }
    if (evaluate->parsed()) {
        double mse = 0.0, mae = 0.0;
        const cbf_status s = cbf_evaluate(exp, ckpt(c), &mse, &mae);
        if (s == CBF_OK) std::printf("test mse %.6f mae %.6f\n", mse, mae);
        return report(s, "evaluate");
    }
    if (cka->parsed()) return report(cbf_cka_report(exp, ckpt(c)), "cka-report");
    if (lens->parsed()) {
        return report(cbf_lens(exp, ckpt(c), mask.empty() ? nullptr : mask.c_str(),
                               origin.empty() ? nullptr : origin.c_str()),
                      "lens");
    }
    if (intervene->parsed()) {
        std::vector<long> s;
        try {
            s = parse_shifts(shifts);
        } catch (const CLI::ValidationError& e) {
            std::cerr << e.what() << "\n";
            return kExitValidation;
        }
        return report(cbf_intervene(exp, ckpt(c), shifts.empty() ? nullptr : s.data(), s.size()), "intervene");
    }
    if (sweep->parsed()) {
        std::vector<double> a;
        try {
            a = parse_alphas(alphas);
        } catch (const CLI::ValidationError& e) {
            std::cerr << e.what() << "\n";
            return kExitValidation;
        }
        const cbf_status s = cbf_alpha_sweep(exp, alphas.empty() ? nullptr : a.data(), a.size(), on_step, &c.quiet);
        if (s == CBF_OK) std::printf("summary written to %s/alpha_sweep.csv\n", cbf_experiment_run_dir(exp));
        return report(s, "alpha-sweep");
    }
    if (run->parsed()) {
        if (cbf_status s = cbf_train(exp, on_step, &c.quiet); s != CBF_OK) return report(s, "train");
        double mse = 0.0, mae = 0.0;
        if (cbf_status s = cbf_evaluate(exp, nullptr, &mse, &mae); s != CBF_OK) return report(s, "evaluate");
        std::printf("test mse %.6f mae %.6f\n", mse, mae);
        if (cbf_status s = cbf_cka_report(exp, nullptr); s != CBF_OK) return report(s, "cka-report");
        if (bottleneck_active(exp)) {
            if (cbf_status s = cbf_lens(exp, nullptr, nullptr, nullptr); s != CBF_OK) return report(s, "lens");
            if (cbf_status s = cbf_intervene(exp, nullptr, nullptr, 0); s != CBF_OK) return report(s, "intervene");
        }
        const cbf_status s = cbf_emit_reports(cbf_experiment_run_dir(exp));
        if (s == CBF_OK) std::printf("run complete: %s\n", cbf_experiment_run_dir(exp));
        return report(s, "report");
    }
    return 0;
}
