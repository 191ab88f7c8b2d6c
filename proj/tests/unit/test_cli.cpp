#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "cbformer/checkpoint.hpp"
#include "doctest.h"
#include "experiment_fixture.hpp"

namespace fs = std::filesystem;

namespace {

int cli(const std::string& args, const fs::path& log) {
    const std::string cmd = std::string(CBF_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("cli exit codes and run pipeline") {
    const auto dir = cbf::test::scratch_dir("cli");
    const auto log = dir / "log.txt";
    const auto cfg = cbf::test::write_config(dir, "exp.json", cbf::test::small_experiment("cli", dir));

    CHECK(cli("--help", log) == 0);
    CHECK(cli("no-such-command", log) == 2);
    CHECK(cli("validate " + cfg.string(), log) == 0);
    CHECK(cbf::test::slurp(log).find("\"d_model\": 12") != std::string::npos);

    auto bad = cbf::test::small_experiment("cli", dir);
    bad["model"]["d_model"] = 10;
    bad["training"]["patience"] = -2;
    const auto bad_cfg = cbf::test::write_config(dir, "bad.json", bad);
    CHECK(cli("train " + bad_cfg.string(), log) == 2);
    const std::string report = cbf::test::slurp(log);
    CHECK(report.find("invalid configuration") != std::string::npos);
    CHECK(report.find("d_model") != std::string::npos);
    CHECK(report.find("patience") != std::string::npos);
    CHECK(cli("validate " + cfg.string() + " --set training.alpha=7", log) == 2);
    CHECK(cli("report " + (dir / "nothing").string(), log) == 3);

    REQUIRE(cli("run --quiet " + cfg.string(), log) == 0);
    const fs::path run = dir / "cli";
    const std::string hash = cbf::file_hash(run / "checkpoint.bin");
    CHECK(fs::exists(run / ("heatmap_" + hash + ".svg")));
    CHECK(fs::exists(run / "intervention.svg"));
    CHECK(cli("report " + run.string(), log) == 0);

    CHECK(cli("intervene " + cfg.string() + " --shifts 6,12", log) == 0);
    CHECK(nlohmann::json::parse(cbf::test::slurp(run / "intervention.json"))["records"].size() == 2);
    CHECK(cli("intervene " + cfg.string() + " --shifts six", log) == 2);
    CHECK(cli("lens " + cfg.string() + " --mask 5", log) == 2);
    CHECK(cli("evaluate " + cfg.string() + " --checkpoint " + (dir / "absent.bin").string(), log) == 3);

    // Same config and seed: same checkpoint bytes.
    CHECK(cli("train --quiet " + cfg.string(), log) == 0);
    CHECK(cbf::file_hash(run / "checkpoint.bin") == hash);
    CHECK(cli("fit-ar " + cfg.string(), log) == 0);
    CHECK(cli("cka-report " + cfg.string(), log) == 0);
}

TEST_CASE("cli selfcheck") {
    const auto log = cbf::test::scratch_dir("cli_selfcheck") / "log.txt";
    CHECK(cli("selfcheck", log) == 0);
    const std::string out = cbf::test::slurp(log);
    CHECK(out.find("gradients") != std::string::npos);
    CHECK(out.find("cka") != std::string::npos);
    CHECK(out.find("decomposition") != std::string::npos);
    CHECK(out.find("FAIL") == std::string::npos);
}
