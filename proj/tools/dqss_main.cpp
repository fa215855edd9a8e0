// SPDX-License-Identifier: Apache-2.0
#include "dqss/kernels.hpp"
#include "dqss/model_io.hpp"
#include "dqss/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <string>
#include <vector>

namespace {

using dqss::pipeline::ExitCode;

struct FlagSlot {
    std::string key;
    std::string value;
    CLI::Option* option = nullptr;
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Differentiable quantization strategy search toolkit"};
    app.require_subcommand(1, 1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "key = value configuration file");

    std::vector<FlagSlot> slots;
    slots.reserve(dqss::pipeline::config_keys().size());
    for (const auto& key : dqss::pipeline::config_keys()) {
        if (key == "uniform-theta") continue;
        slots.push_back({key, {}, nullptr});
        slots.back().option = app.add_option("--" + key, slots.back().value);
    }
    bool uniform_theta = false;
    CLI::Option* uniform_flag =
        app.add_flag("--uniform-theta", uniform_theta, "eval: omit the searched row, so no assignment file is needed");

    auto* calibrate = app.add_subcommand("calibrate", "per-layer quantization parameters for every pool strategy");
    auto* search = app.add_subcommand("search", "importance search, then winner-take-all assignment");
    auto* eval = app.add_subcommand("eval", "accuracy of FP32, uniform strategies, DQSS and DQSS-None");
    auto* qat = app.add_subcommand("qat-train", "quantization-aware training with a shared-weight mixture");
    auto* report = app.add_subcommand("report", "strategy distribution of an assignment");
    auto* make_toy = app.add_subcommand("make-toy", "write a pretrained toy model and its data");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::Usage);
    }

    try {
        std::map<std::string, std::string> file_values;
        if (!config_path.empty()) {
            file_values = dqss::pipeline::parse_config_text(dqss::read_text_file(config_path), config_path);
        }
        std::vector<std::pair<std::string, std::string>> flag_values;
        for (const auto& s : slots) {
            if (s.option->count() > 0) flag_values.emplace_back(s.key, s.value);
        }
        if (uniform_flag->count() > 0) flag_values.emplace_back("uniform-theta", uniform_theta ? "true" : "false");
        const auto cfg = dqss::pipeline::resolve_config(file_values, flag_values);
        dqss::kernels::set_num_threads(cfg.threads);

        if (calibrate->parsed()) dqss::pipeline::run_calibrate(cfg, std::cerr);
        else if (search->parsed()) dqss::pipeline::run_search(cfg, std::cout, std::cerr);
        else if (eval->parsed()) dqss::pipeline::run_eval(cfg, std::cout, std::cerr);
        else if (qat->parsed()) dqss::pipeline::run_qat_train(cfg, std::cout, std::cerr);
        else if (report->parsed()) dqss::pipeline::run_report(cfg, std::cout);
        else if (make_toy->parsed()) dqss::pipeline::run_make_toy(cfg, std::cerr);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(dqss::pipeline::exit_code_for(e));
    }
    return 0;
}
