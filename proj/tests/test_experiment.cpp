#undef CHECK // torch's logging macro, in via the precompiled header
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "phasealign/errors.hpp"
#include "phasealign/experiment.hpp"
#include "phasealign/io.hpp"

using namespace phasealign;
namespace fs = std::filesystem;

namespace {

json tiny_study(const std::vector<std::string>& strategies) {
    return json{{"run_id", "tiny"},
                {"data", {{"phantom", {{"shape", 32}, {"n_cases", 4}, {"tumor_rate", 0.5}, {"seed", 2}}}}},
                {"strategies", strategies},
                {"folds", {{"k", 4}, {"run", {1}}}},
                {"model", {{"arch", {{"n_levels", 2}, {"channels", {4, 4, 8}}}}}},
                {"train", {{"total_iters", 3}, {"patch", 16}, {"jitter", 0}}},
                {"registration", {{"source", "true"}}},
                {"predict", {{"patch", 32}}}};
}

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("phasealign_test_experiment_" + name);
    fs::remove_all(d);
    return d;
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    int n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

} // namespace

TEST_CASE("one strategy and one fold give one model and one summary") {
    const fs::path out = scratch("na");
    const ExperimentResult r = run_experiment(parse_experiment_config(tiny_study({"na"})), out);
    const fs::path dir = out / "tiny";
    CHECK(r.dir == dir);
    CHECK(fs::exists(dir / "seed0" / "fold1" / "na" / "checkpoint" / "model.pt"));
    CHECK_FALSE(fs::exists(dir / "seed0" / "fold0"));
    CHECK(count_lines(dir / "seed0" / "fold1" / "na" / "loss.csv") == 4);
    CHECK(r.rows.size() == 1); // four cases, four folds
    CHECK(r.rows[0].method == "na");
    CHECK(fs::exists(dir / "seed0" / "fold1" / "na" / "pred" / (r.rows[0].result.case_id + ".vol3")));

    const std::vector<SummaryRow> summary = read_summary_csv(dir / "summary.csv");
    REQUIRE(summary.size() == 2);
    CHECK(summary[0].method == "na");
    CHECK(summary[0].seed == "0");
    CHECK(summary[1].seed == "mean");
    CHECK(summary[0].n_cases == 1);
    CHECK(fs::exists(dir / "metrics.csv"));
    CHECK(fs::exists(dir / "report.md"));
    CHECK(fs::exists(dir / "config.json"));
    CHECK(read_json_file(dir / "config.json") == tiny_study({"na"}));

    // a second run reuses the finished checkpoint and reproduces the metrics
    const auto stamp = fs::last_write_time(dir / "seed0" / "fold1" / "na" / "checkpoint" / "model.pt");
    const ExperimentResult again = run_experiment(parse_experiment_config(tiny_study({"na"})), out);
    CHECK(fs::last_write_time(dir / "seed0" / "fold1" / "na" / "checkpoint" / "model.pt") == stamp);
    CHECK(again.rows[0].result.dsc == r.rows[0].result.dsc);
    fs::remove_all(out);
}

TEST_CASE("all strategies plus both ensembles") {
    const fs::path out = scratch("all");
    json cfg = tiny_study({"na", "ea", "la", "sa"});
    cfg["seeds"] = {0, 1};
    const ExperimentResult r = run_experiment(parse_experiment_config(cfg), out);
    for (const char* m : {"na", "ea", "la", "sa", "ens_vote", "ens_mean"}) {
        CAPTURE(m);
        CHECK(r.mean_tumor_dsc.contains(m));
        int rows = 0;
        for (const MetricRow& row : r.rows) rows += row.method == m;
        CHECK(rows == 2);
    }
    const std::vector<SummaryRow> summary = read_summary_csv(out / "tiny" / "summary.csv");
    CHECK(summary.size() == 6 * 3);
    CHECK(fs::exists(out / "tiny" / "loss_seed0_fold1.svg"));
    fs::remove_all(out);
}

TEST_CASE("early alignment with external fields needs them in the manifest") {
    const fs::path out = scratch("external");
    json cfg = tiny_study({"ea"});
    cfg["registration"] = {{"source", "external"}};
    CHECK_THROWS_AS(run_experiment(parse_experiment_config(cfg), out), ConfigError);
    fs::remove_all(out);
}

TEST_CASE("too few cases for the fold count") {
    const fs::path out = scratch("folds");
    json cfg = tiny_study({"na"});
    cfg["folds"] = {{"k", 5}};
    CHECK_THROWS_AS(run_experiment(parse_experiment_config(cfg), out), ConfigError);
    fs::remove_all(out);
}
